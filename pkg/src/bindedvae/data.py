"""Synthetic compound data, property simulation, expert rules and file I/O.

A compound is a row of ``p`` non-negative component ratios summing to one.
The synthetic generator mimics a rubber recipe: components are partitioned
into functional groups (polymers, fillers, ...), each row activates a few
components per group, and the row's mass is split between groups.  Rows are
variations on a handful of base recipes ("archetypes"): each archetype
favours a core set of components in every group, which gives the data the
banded, patterned support of real formulation tables.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
N_PROPERTIES = 3


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class GroupSpec:
    name: str
    size: int
    min_active: int
    max_active: int
    mass: float  # concentration of this group in the group-mass Dirichlet

    def validate(self) -> None:
        if self.size < 1:
            raise DataError(f"group {self.name!r} is empty")
        if not 0 <= self.min_active <= self.max_active <= self.size:
            raise DataError(f"group {self.name!r}: need 0 <= min_active <= max_active <= size")
        if not self.mass > 0:
            raise DataError(f"group {self.name!r}: mass concentration must be positive")


DEFAULT_GROUPS = (
    GroupSpec("polymers", 8, 1, 2, 16.0),
    GroupSpec("fillers", 15, 2, 4, 12.0),
    GroupSpec("oils", 10, 1, 2, 4.0),
    GroupSpec("curatives", 16, 4, 7, 3.0),
    GroupSpec("additives", 50, 6, 12, 3.0),
)


@dataclass(frozen=True)
class SynthConfig:
    n: int = 12_000
    seed: int = 0
    groups: tuple[GroupSpec, ...] = DEFAULT_GROUPS
    # within-group Dirichlet concentration; multiplied by a per-component weight
    concentration: float = 2.0
    # 0 archetypes -> components picked uniformly inside each group
    n_archetypes: int = 4
    off_core_weight: float = 0.01

    @property
    def p(self) -> int:
        return sum(g.size for g in self.groups)

    def validate(self) -> None:
        if self.n < 1:
            raise DataError("n must be >= 1")
        if not self.groups:
            raise DataError("at least one component group is required")
        for g in self.groups:
            g.validate()
        if all(g.max_active == 0 for g in self.groups):
            raise DataError("no group can activate any component")
        if not self.concentration > 0:
            raise DataError("concentration must be positive")
        if self.n_archetypes < 0 or not self.off_core_weight >= 0:
            raise DataError("n_archetypes and off_core_weight must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["groups"] = [asdict(g) for g in self.groups]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "groups" in d:
            d["groups"] = tuple(GroupSpec(**g) for g in d["groups"])
        d.pop("p", None)
        return cls(**d)


def group_indices(groups) -> dict[str, list[int]]:
    out, start = {}, 0
    for g in groups:
        out[g.name] = list(range(start, start + g.size))
        start += g.size
    return out


@dataclass
class PropertyModel:
    """Three smooth property functions of a compound.

    1. ``c1 + w1 . x``
    2. ``c2 + w2 . x + kappa * sum(x[group_a]) * sum(x[group_b])``
    3. ``c3 + a3 * tanh(b3 * sum(x[group_c]))``
    """

    w1: np.ndarray
    c1: float
    w2: np.ndarray
    c2: float
    kappa: float
    group_a: list[int]
    group_b: list[int]
    a3: float
    b3: float
    c3: float
    group_c: list[int]

    @classmethod
    def random(cls, groups: dict[str, list[int]], p: int, rng: np.random.Generator):
        names = list(groups)
        a, b = names[0], names[min(1, len(names) - 1)]
        return cls(w1=rng.uniform(-5, 5, p), c1=float(rng.uniform(-1, 1)),
                   w2=rng.uniform(-5, 5, p), c2=float(rng.uniform(-1, 1)),
                   kappa=float(rng.uniform(5, 10)), group_a=groups[a], group_b=groups[b],
                   a3=float(rng.uniform(1, 3)), b3=float(rng.uniform(3, 6)),
                   c3=float(rng.uniform(-1, 1)), group_c=groups[b])

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        sa = X[:, self.group_a].sum(axis=1)
        sb = X[:, self.group_b].sum(axis=1)
        sc = X[:, self.group_c].sum(axis=1)
        return np.column_stack([
            self.c1 + X @ self.w1,
            self.c2 + X @ self.w2 + self.kappa * sa * sb,
            self.c3 + self.a3 * np.tanh(self.b3 * sc),
        ])

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PropertyModel":
        d = dict(d)
        d["w1"] = np.asarray(d["w1"], dtype=np.float64)
        d["w2"] = np.asarray(d["w2"], dtype=np.float64)
        return cls(**d)


def property_simulate(x, model: PropertyModel) -> np.ndarray:
    """Property vector(s) for one row or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise DataError("property_simulate: ratios must be non-negative")
    out = model(x)
    return out[0] if x.ndim == 1 else out


@dataclass
class CompoundDataset:
    X: np.ndarray
    properties: np.ndarray | None = None
    groups: dict[str, list[int]] = field(default_factory=dict)
    property_model: PropertyModel | None = None
    config: SynthConfig | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def sparsity(self) -> float:
        return float(np.mean(self.X == 0))


def synth_dataset(config: SynthConfig = SynthConfig()) -> CompoundDataset:
    config.validate()
    data_seq, prop_seq, weight_seq = np.random.SeedSequence(config.seed).spawn(3)
    groups = group_indices(config.groups)
    p = config.p
    # per-component typical share inside its group
    wrng = np.random.default_rng(weight_seq)
    comp_weight = np.exp(wrng.normal(0.0, 0.5, p)).clip(0.5, 2.0)
    alpha = config.concentration * comp_weight
    group_mass = np.array([g.mass for g in config.groups])
    pick_prob = _archetype_pick_probs(config, groups, wrng)

    rng = np.random.default_rng(data_seq)
    X = np.zeros((config.n, p))
    for i in range(config.n):
        probs = pick_prob[int(rng.integers(len(pick_prob)))]
        split = rng.dirichlet(group_mass)
        row = X[i]
        for g, share in zip(config.groups, split):
            idx = np.asarray(groups[g.name])
            k = int(rng.integers(g.min_active, g.max_active + 1))
            if k == 0:
                continue
            pick = np.sort(rng.choice(idx, size=k, replace=False, p=probs[g.name]))
            row[pick] = share * rng.dirichlet(alpha[pick])
        total = row.sum()
        if total == 0:
            raise DataError(f"row {i} drew no active component; adjust min_active")
        row /= total
    model = PropertyModel.random(groups, p, np.random.default_rng(prop_seq))
    return CompoundDataset(X, model(X), groups, model, config)


def _archetype_pick_probs(config: SynthConfig, groups, rng) -> list[dict[str, np.ndarray]]:
    """Per archetype and group, the probabilities used to pick active components."""
    if config.n_archetypes == 0:
        return [{g.name: np.full(g.size, 1.0 / g.size) for g in config.groups}]
    out = []
    for _ in range(config.n_archetypes):
        probs = {}
        for g in config.groups:
            w = np.full(g.size, config.off_core_weight)
            w[rng.choice(g.size, size=g.max_active, replace=False)] = 1.0
            probs[g.name] = w / w.sum()
        out.append(probs)
    return out


def binarize(X) -> np.ndarray:
    return (np.asarray(X) > 0).astype(np.float64)


def truncate_decimals(X, decimals: int = 4) -> np.ndarray:
    """Truncate non-negative values toward zero at ``decimals`` places.

    ``X * scale`` can land one ulp below an integer (0.0003 * 1e4 is
    2.9999999999999996), so the integer part is corrected against the
    decimal it denotes.  The result is idempotent under this function and
    every entry prints with at most ``decimals`` decimals.
    """
    scale = 10.0 ** decimals
    X = np.asarray(X, dtype=np.float64)
    k = np.trunc(X * scale)
    k = np.where((k + 1.0) / scale <= X, k + 1.0, k)
    k = np.where(k / scale > X, k - 1.0, k)
    return k / scale


# ---------------------------------------------------------------- rules

RULE_KINDS = ("sum", "count")


@dataclass(frozen=True)
class Rule:
    id: str
    kind: str
    indices: tuple[int, ...]
    lo: float
    hi: float
    group: str | None = None

    def holds(self, X: np.ndarray) -> np.ndarray:
        sub = X[:, list(self.indices)]
        v = sub.sum(axis=1) if self.kind == "sum" else (sub > 0).sum(axis=1)
        return (v >= self.lo) & (v <= self.hi)


@dataclass
class RuleSet:
    rules: list[Rule]
    p: int

    def __post_init__(self):
        seen = set()
        for r in self.rules:
            if r.kind not in RULE_KINDS:
                raise DataError(f"rule {r.id}: unknown kind {r.kind!r}")
            if r.lo > r.hi:
                raise DataError(f"rule {r.id}: lo {r.lo} > hi {r.hi}")
            if not r.indices:
                raise DataError(f"rule {r.id}: empty index set")
            bad = [i for i in r.indices if not 0 <= i < self.p]
            if bad:
                raise DataError(f"rule {r.id}: indices {bad} out of range for p={self.p}")
            if r.id in seen:
                raise DataError(f"duplicate rule id {r.id}")
            seen.add(r.id)

    def pass_mask(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.p:
            raise DataError(f"rows have {X.shape[1]} components, rules expect {self.p}")
        ok = np.ones(X.shape[0], dtype=bool)
        for r in self.rules:
            ok &= r.holds(X)
        return ok

    def to_dict(self) -> dict:
        return {"version": FORMAT_VERSION, "p": self.p,
                "rules": [{**asdict(r), "indices": list(r.indices)} for r in self.rules]}

    @classmethod
    def from_dict(cls, d: dict) -> "RuleSet":
        if d.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported rule-set version {d.get('version')}")
        rules = [Rule(r["id"], r["kind"], tuple(r["indices"]), float(r["lo"]), float(r["hi"]),
                      r.get("group")) for r in d["rules"]]
        return cls(rules, int(d["p"]))


def default_rules(groups: dict[str, list[int]], p: int) -> RuleSet:
    poly, fill = groups["polymers"], groups["fillers"]
    return RuleSet([
        Rule("polymer_sum", "sum", tuple(poly), 0.2, 0.8, "polymers"),
        Rule("filler_sum", "sum", tuple(fill), 0.0, 0.6, "fillers"),
        Rule("polymer_present", "count", tuple(poly), 1, len(poly), "polymers"),
        Rule("max_components", "count", tuple(range(p)), 0, 30),
    ], p)


def check_rules(x, rules: RuleSet) -> tuple[bool, list[str]]:
    x = np.asarray(x, dtype=np.float64)[None, :]
    violated = [r.id for r in rules.rules if not r.holds(x)[0]]
    return not violated, violated


def save_rules(rules: RuleSet, path) -> None:
    Path(path).write_text(json.dumps(rules.to_dict(), indent=2) + "\n")


def load_rules(path) -> RuleSet:
    return RuleSet.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- CSV I/O

def _fmt(v: float) -> str:
    return "%.17g" % v


def write_matrix_csv(path, X: np.ndarray, properties: np.ndarray | None = None) -> None:
    X = np.asarray(X, dtype=np.float64)
    header = [f"component_{j}" for j in range(X.shape[1])]
    if properties is not None:
        header += [f"prop_{j}" for j in range(properties.shape[1])]
    lines = [",".join(header)]
    for i in range(X.shape[0]):
        vals = X[i].tolist()
        if properties is not None:
            vals += properties[i].tolist()
        lines.append(",".join(map(_fmt, vals)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a component (+ optional property) CSV; rejects malformed rows."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        p = sum(h.startswith("component_") for h in header)
        q = sum(h.startswith("prop_") for h in header)
        expected = [f"component_{j}" for j in range(p)] + [f"prop_{j}" for j in range(q)]
        if p == 0 or header != expected:
            raise DataError(f"{path}: unexpected header")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != p + q:
                raise DataError(f"{path}: row {lineno} has {len(rec)} fields, expected {p + q}")
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                raise DataError(f"{path}: row {lineno} has a non-numeric field") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}: row {lineno} has a non-finite value")
            if min(vals[:p]) < 0:
                raise DataError(f"{path}: row {lineno} has a negative ratio")
            rows.append(vals)
    A = np.array(rows, dtype=np.float64).reshape(len(rows), p + q)
    return A[:, :p], (A[:, p:] if q else None)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _meta_path(path) -> Path:
    return Path(str(path) + ".json")


def _sum_path(path) -> Path:
    return Path(str(path) + ".sha256")


def save_dataset(ds: CompoundDataset, path) -> str:
    """Write CSV plus JSON metadata and checksum sidecars; returns the checksum."""
    write_matrix_csv(path, ds.X, ds.properties)
    meta = {"version": FORMAT_VERSION, "groups": ds.groups,
            "property_model": ds.property_model.to_dict() if ds.property_model else None,
            "synth_config": ds.config.to_dict() if ds.config else None}
    _meta_path(path).write_text(json.dumps(meta, indent=1) + "\n")
    digest = sha256_file(path)
    _sum_path(path).write_text(f"{digest}  {Path(path).name}\n")
    return digest


def load_dataset(path, verify: bool = True) -> CompoundDataset:
    if verify and _sum_path(path).exists():
        expected = _sum_path(path).read_text().split()[0]
        if sha256_file(path) != expected:
            raise DataError(f"{path}: checksum mismatch")
    X, props = read_matrix_csv(path)
    ds = CompoundDataset(X, props)
    if _meta_path(path).exists():
        meta = json.loads(_meta_path(path).read_text())
        ds.groups = {k: list(v) for k, v in meta.get("groups", {}).items()}
        if meta.get("property_model"):
            ds.property_model = PropertyModel.from_dict(meta["property_model"])
        if meta.get("synth_config"):
            ds.config = SynthConfig.from_dict(meta["synth_config"])
    return ds
