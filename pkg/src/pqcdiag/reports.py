"""Result containers: estimate reports, sensitivity maps, intervention plans.

Every container serializes to a plain JSON dict and back.  A "canonical
payload" is the same dict minus volatile fields (wall-clock time), dumped
with sorted keys — two runs with the same inputs and seed must produce the
same canonical payload byte for byte, whatever the thread count, and its
SHA-256 is what run manifests record.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field

VOLATILE_FIELDS = ("wall_time_s",)


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"),
                      allow_nan=True)


def payload_digest(payload: dict) -> str:
    """SHA-256 over the canonical form with volatile fields removed."""
    trimmed = {k: v for k, v in payload.items() if k not in VOLATILE_FIELDS}
    return hashlib.sha256(canonical_json(trimmed).encode()).hexdigest()


@dataclass
class DiagnosticConfig:
    """Sample budgets and seed for one estimator run.

    n_theta counts outer parameter draws, n_tau inner path replicates per
    draw, n_sigma Pauli-word draws (expressibility only).  epsilon/delta are
    optional accuracy targets that, when given, override the counts via the
    Hoeffding planner downstream.
    """

    n_theta: int = 1000
    n_tau: int = 16
    n_sigma: int = 64
    seed: int = 0
    threads: int = 1
    epsilon: "float | None" = None
    delta: "float | None" = None

    def __post_init__(self) -> None:
        for name in ("n_theta", "n_tau", "n_sigma"):
            v = int(getattr(self, name))
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
            setattr(self, name, v)
        self.seed = int(self.seed)
        self.threads = max(1, int(self.threads))
        for name in ("epsilon", "delta"):
            v = getattr(self, name)
            if v is not None and not 0.0 < float(v) < 1.0:
                raise ValueError(f"{name} must lie in (0,1), got {v}")

    def as_dict(self) -> dict:
        """Serializable form; ``threads`` is an execution detail with no
        bearing on the numbers, so it never enters payloads (or digests)."""
        out = {"n_theta": self.n_theta, "n_tau": self.n_tau,
               "n_sigma": self.n_sigma, "seed": self.seed}
        if self.epsilon is not None:
            out["epsilon"] = self.epsilon
        if self.delta is not None:
            out["delta"] = self.delta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        return cls(**d)

    def replaced(self, **kw) -> "DiagnosticConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update({k: v for k, v in kw.items() if v is not None})
        return DiagnosticConfig(**d)


@dataclass
class EstimateReport:
    """One scalar diagnostic: mean +- stderr plus full sampling provenance.

    ``stats`` carries auxiliary consistency statistics the estimator wants
    on record (mean-gradient check, negative-estimate flag for quantities
    that are non-negative in exact arithmetic, ...).
    """

    quantity: str
    mean: float
    stderr: float
    n_theta: int
    n_tau: int
    n_sigma: int
    seed: int
    wall_time_s: float
    config: dict
    stats: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out = {
            "quantity": self.quantity,
            "mean": self.mean,
            "stderr": self.stderr,
            "n_theta": self.n_theta,
            "n_tau": self.n_tau,
            "n_sigma": self.n_sigma,
            "seed": self.seed,
            "wall_time_s": self.wall_time_s,
            "config": self.config,
        }
        if self.stats:
            out["stats"] = self.stats
        return out

    @classmethod
    def from_json_dict(cls, d: dict) -> "EstimateReport":
        return cls(quantity=d["quantity"], mean=d["mean"], stderr=d["stderr"],
                   n_theta=d["n_theta"], n_tau=d["n_tau"],
                   n_sigma=d["n_sigma"], seed=d["seed"],
                   wall_time_s=d["wall_time_s"], config=dict(d["config"]),
                   stats=dict(d.get("stats", {})))

    def digest(self) -> str:
        return payload_digest(self.to_json_dict())


@dataclass
class SiteGradient:
    """Sensitivity of the MSE to one noise site's strength parameter."""

    layer: int
    element: int
    qubits: tuple
    channel: str
    param: str
    gradient: float
    stderr: float

    def to_json_dict(self) -> dict:
        return {"layer": self.layer, "element": self.element,
                "qubits": list(self.qubits), "channel": self.channel,
                "param": self.param, "gradient": self.gradient,
                "stderr": self.stderr}


@dataclass
class SensitivityMap:
    """Per-site MSE gradients, one entry per noise site of the circuit."""

    entries: list
    n_theta: int
    n_tau: int
    seed: int
    wall_time_s: float
    config: dict

    def to_json_dict(self) -> dict:
        return {
            "quantity": "sensitivity_map",
            "entries": [e.to_json_dict() for e in self.entries],
            "n_theta": self.n_theta,
            "n_tau": self.n_tau,
            "seed": self.seed,
            "wall_time_s": self.wall_time_s,
            "config": self.config,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SensitivityMap":
        entries = [SiteGradient(layer=e["layer"], element=e["element"],
                                qubits=tuple(e["qubits"]),
                                channel=e["channel"], param=e["param"],
                                gradient=e["gradient"], stderr=e["stderr"])
                   for e in d["entries"]]
        return cls(entries=entries, n_theta=d["n_theta"], n_tau=d["n_tau"],
                   seed=d["seed"], wall_time_s=d["wall_time_s"],
                   config=dict(d["config"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("layer,element,qubits,gradient,stderr\n")
        for e in self.entries:
            qs = ";".join(str(q) for q in e.qubits)
            buf.write(f"{e.layer},{e.element},{qs},"
                      f"{e.gradient!r},{e.stderr!r}\n")
        return buf.getvalue()

    def digest(self) -> str:
        return payload_digest(self.to_json_dict())


@dataclass
class PlanStep:
    """One greedy intervention: a site's strength lowered to a new value."""

    layer: int
    element: int
    qubits: tuple
    channel: str
    param: str
    old_value: float
    new_value: float
    mse_after: float
    mse_stderr: float

    def to_json_dict(self) -> dict:
        return {"layer": self.layer, "element": self.element,
                "qubits": list(self.qubits), "channel": self.channel,
                "param": self.param, "old_value": self.old_value,
                "new_value": self.new_value, "mse_after": self.mse_after,
                "mse_stderr": self.mse_stderr}


@dataclass
class InterventionPlan:
    """Ordered bottleneck-first interventions with the measured MSE path."""

    baseline_mse: float
    baseline_stderr: float
    steps: list
    seed: int
    wall_time_s: float
    config: dict

    def __post_init__(self) -> None:
        for s in self.steps:
            if s.new_value > s.old_value + 1e-15:
                raise ValueError("interventions must not raise a site's "
                                 "noise strength")

    def to_json_dict(self) -> dict:
        return {
            "quantity": "intervention_plan",
            "baseline_mse": self.baseline_mse,
            "baseline_stderr": self.baseline_stderr,
            "steps": [s.to_json_dict() for s in self.steps],
            "seed": self.seed,
            "wall_time_s": self.wall_time_s,
            "config": self.config,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "InterventionPlan":
        steps = [PlanStep(layer=s["layer"], element=s["element"],
                          qubits=tuple(s["qubits"]), channel=s["channel"],
                          param=s["param"], old_value=s["old_value"],
                          new_value=s["new_value"], mse_after=s["mse_after"],
                          mse_stderr=s["mse_stderr"])
                 for s in d["steps"]]
        return cls(baseline_mse=d["baseline_mse"],
                   baseline_stderr=d["baseline_stderr"], steps=steps,
                   seed=d["seed"], wall_time_s=d["wall_time_s"],
                   config=dict(d["config"]))

    def trajectory_csv(self) -> str:
        """MSE after each intervention, step 0 being the untouched circuit."""
        buf = io.StringIO()
        buf.write("step,layer,element,qubits,param,new_value,mse,stderr\n")
        buf.write(f"0,,,,,,{self.baseline_mse!r},{self.baseline_stderr!r}\n")
        for i, s in enumerate(self.steps, start=1):
            qs = ";".join(str(q) for q in s.qubits)
            buf.write(f"{i},{s.layer},{s.element},{qs},{s.param},"
                      f"{s.new_value!r},{s.mse_after!r},{s.mse_stderr!r}\n")
        return buf.getvalue()

    def digest(self) -> str:
        return payload_digest(self.to_json_dict())
