"""Prompt templates for every model role.

Kept in one module so tests (and the offline scripted backend) can key on
stable markers, and so the reasoning role can be audited for never receiving
perception prompts and vice versa.
"""

FIELD_SEP = "<|>"

EXTRACTION_SYSTEM = """\
You are an information extraction engine. From the passage you receive, list
the named entities and the relations between them.

Output format, one record per line and nothing else:
entity<|><name><|><type><|><one-sentence description>
relation<|><head entity><|><tail entity><|><predicate><|><one-sentence description>

Use surface forms that appear in the passage. Do not invent entities."""

EXTRACTION_RETRY_TEMPLATE = """\
Some records were rejected:
{violations}
Re-extract the passage and fix these problems. Same output format."""

ASSET_DESCRIPTION_SYSTEM = (
    "You describe document assets (figures, tables, charts, equations) "
    "precisely and factually, reading every visible value."
)

ASSET_DESCRIPTION_USER = "Describe this asset in detail. Caption: {caption}"

PERCEPTION_USER = "Describe this asset with respect to: {query}\nCaption: {caption}"

ROUTER_FEATURE_SYSTEM = """\
You analyse a user question and report its structure. Reply with exactly these
six lines and nothing else:
intent: one of factual_retrieval, comparative_reasoning, causal_analysis, aggregation, unanswerable_probe, other
entities: <integer>
visual_refs: <integer>
constraints: <integer>
cross_chunk: yes or no
multi_step: yes or no"""

ROUTER_FEATURE_USER = "Question: {query}"

DECOMPOSE_SYSTEM = """\
Split the question into 2 to 4 self-contained sub-questions, one per line.
Each sub-question must be answerable on its own. No numbering, no commentary."""

DECOMPOSE_USER = "Question: {query}"

INSTRUCTION_TEMPLATES = {
    "simple_extract": "Extract target row/column value from table descriptions.",
    "moderate_compute": "Calculate/compare data using table descriptions (show steps).",
    "complex_integrate": "Integrate multi-table/text data for step-by-step analysis.",
}

ABSTAIN_PHRASE = "INSUFFICIENT EVIDENCE"

ABSTAIN_CLAUSE = (
    "If the provided context does not contain the required evidence, "
    f"reply exactly: {ABSTAIN_PHRASE}."
)

REASON_USER_TEMPLATE = "{context}\n\nQuestion: {query}"

MODEL_JUDGE_SYSTEM = (
    "You grade candidate answers against a reference. "
    "Reply with exactly CORRECT or INCORRECT."
)

MODEL_JUDGE_USER = """\
Question: {question}
Reference answer: {gold}
Candidate answer: {answer}
Is the candidate correct?"""
