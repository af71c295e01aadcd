"""Configuration loading.

One INI document holds a section per gateway role, the price table, pipeline
hyperparameters, fixture settings, and storage paths. Endpoint credentials
are never stored in the file; the [gateway] section can name an environment
variable that holds a bearer token.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .errors import ConfigError

ROLES = (
    "router_slm",
    "extractor_llm",
    "embedder",
    "reranker",
    "perception_vlm",
    "reasoning_llm",
)
GENERATIVE_ROLES = ("router_slm", "extractor_llm", "perception_vlm", "reasoning_llm")

CASSETTE_MODES = ("record", "replay", "passthrough")


@dataclass(frozen=True)
class ModelEndpoint:
    """One named endpoint behind the gateway.

    temperature and top_p default to 0.7 and 0.9 for all generative roles;
    max_in_flight bounds concurrent outstanding requests to this endpoint.
    """

    role: str
    base_url: str
    model_name: str
    temperature: float = 0.7
    top_p: float = 0.9
    max_in_flight: int = 4

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown role {self.role!r}")
        if not (0.0 <= self.temperature <= 1.0):
            raise ConfigError(f"temperature {self.temperature} outside [0, 1]")
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigError(f"top_p {self.top_p} outside (0, 1]")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be a positive integer")


@dataclass
class PipelineSettings:
    """Hyperparameters shared by ingestion, retrieval, and synthesis."""

    window: int = 1200
    overlap: int = 100
    k_entities: int = 40
    k_chunks: int = 20
    context_budget: int = 8000
    embedding_dim: int = 1024
    judge_rounds: int = 2
    neighbor_radius: int = 1
    max_sub_queries: int = 4
    perception_workers: int = 1
    eval_workers: int = 1


@dataclass
class GatewaySettings:
    retries: int = 3
    backoff_seconds: float = 0.5
    timeout: float = 30.0
    api_key_env: str = ""


@dataclass
class AppConfig:
    endpoints: dict[str, ModelEndpoint]
    prices: dict[str, tuple[Decimal, Decimal]] = field(default_factory=dict)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    gateway: GatewaySettings = field(default_factory=GatewaySettings)
    cassette_path: str = ""
    cassette_mode: str = "passthrough"
    corpus_dir: str = "corpus"
    decision_log: str = "corpus/decisions.jsonl"
    ledger_path: str = "corpus/ledger.json"

    def endpoint(self, role: str) -> ModelEndpoint:
        try:
            return self.endpoints[role]
        except KeyError:
            raise ConfigError(f"no endpoint configured for role {role!r}") from None


def _get_typed(section, key, cast, default):
    if key not in section:
        return default
    raw = section[key]
    try:
        if cast is bool:
            return section.getboolean(key)
        return cast(raw)
    except (ValueError, InvalidOperation) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def load_config(path: str | Path) -> AppConfig:
    """Parse an INI config file into an AppConfig.

    Every role must be bound to exactly one endpoint; configparser already
    rejects duplicate sections, so presence of all six role sections is the
    remaining check.
    """
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"config file not found: {path}")

    endpoints: dict[str, ModelEndpoint] = {}
    for role in ROLES:
        name = f"role.{role}"
        if not parser.has_section(name):
            raise ConfigError(f"missing section [{name}]")
        sec = parser[name]
        if "base_url" not in sec or "model" not in sec:
            raise ConfigError(f"[{name}] needs base_url and model")
        endpoints[role] = ModelEndpoint(
            role=role,
            base_url=sec["base_url"].rstrip("/"),
            model_name=sec["model"],
            temperature=_get_typed(sec, "temperature", float, 0.7),
            top_p=_get_typed(sec, "top_p", float, 0.9),
            max_in_flight=_get_typed(sec, "max_in_flight", int, 4),
        )

    prices: dict[str, tuple[Decimal, Decimal]] = {}
    if parser.has_section("prices"):
        for model, raw in parser["prices"].items():
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != 2:
                raise ConfigError(
                    f"price for {model!r} must be 'prompt_per_1k, completion_per_1k'"
                )
            try:
                prices[model] = (Decimal(parts[0]), Decimal(parts[1]))
            except InvalidOperation as exc:
                raise ConfigError(f"bad price for {model!r}: {raw!r}") from exc

    pipeline = PipelineSettings()
    if parser.has_section("pipeline"):
        sec = parser["pipeline"]
        for key in vars(pipeline):
            setattr(pipeline, key, _get_typed(sec, key, int, getattr(pipeline, key)))
    if not (0 <= pipeline.overlap < pipeline.window):
        raise ConfigError("pipeline requires 0 <= overlap < window")

    gateway = GatewaySettings()
    if parser.has_section("gateway"):
        sec = parser["gateway"]
        gateway.retries = _get_typed(sec, "retries", int, gateway.retries)
        gateway.backoff_seconds = _get_typed(
            sec, "backoff_seconds", float, gateway.backoff_seconds
        )
        gateway.timeout = _get_typed(sec, "timeout", float, gateway.timeout)
        gateway.api_key_env = sec.get("api_key_env", "")

    cassette_path = ""
    cassette_mode = "passthrough"
    if parser.has_section("fixtures"):
        sec = parser["fixtures"]
        cassette_path = sec.get("cassette", "")
        cassette_mode = sec.get("mode", "passthrough")
        if cassette_mode not in CASSETTE_MODES:
            raise ConfigError(f"fixture mode must be one of {CASSETTE_MODES}")
        if cassette_mode in ("record", "replay") and not cassette_path:
            raise ConfigError(f"fixture mode {cassette_mode!r} needs a cassette path")

    cfg = AppConfig(
        endpoints=endpoints,
        prices=prices,
        pipeline=pipeline,
        gateway=gateway,
        cassette_path=cassette_path,
        cassette_mode=cassette_mode,
    )
    if parser.has_section("storage"):
        sec = parser["storage"]
        cfg.corpus_dir = sec.get("corpus_dir", cfg.corpus_dir)
        cfg.decision_log = sec.get("decision_log", cfg.decision_log)
        cfg.ledger_path = sec.get("ledger", cfg.ledger_path)
    return cfg
