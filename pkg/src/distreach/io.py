"""JSON scenario configs, weight files, result files and CSV export."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from distreach import __version__
from distreach.errors import ParseError, ShapeError
from distreach.model import AgentModel, Box, Mlp, NeighborGraph, Scenario, UncertaintySpec, validate_scenario
from distreach.reformulate import compose_input
from distreach.sdp import SolverSettings
from distreach.sim import CtModel, zoh_discretize

TOP_FIELDS = {"name", "description", "system", "networks", "initial", "horizon", "uncertainty",
              "solver", "mode", "workers", "seed", "references"}
SYSTEM_FIELDS = {"sample_period", "agents"}
AGENT_FIELDS = {"id", "static", "states", "discrete", "continuous", "u_lower", "u_upper", "w", "d"}
MODEL_FIELDS = {"A_self", "A_neighbors", "B", "L"}
NETWORK_FIELDS = {"files", "input_transform", "synth"}
SYNTH_FIELDS = {"hidden", "scale", "gains"}
INITIAL_FIELDS = {"default", "agents"}
UNCERTAINTY_FIELDS = {"delta", "vertices"}
MODES = ("per-agent", "monolithic")
CONFIG_DIR = Path(__file__).parent / "data" / "configs"


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package, e.g. ``shipped_config("platoon_m9")``."""
    path = CONFIG_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no shipped config {name!r}; have {sorted(p.stem for p in CONFIG_DIR.glob('*.json'))}")
    return path


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    pos = text.find(needle)
    return None if pos < 0 else text.count("\n", 0, pos) + 1


def _check_fields(obj, allowed, where: str, text: str):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    for key in obj:
        if key not in allowed:
            line = _line_of(text, key)
            at = f" (line {line})" if line else ""
            raise ParseError(f"{where}: unknown field {key!r}{at}")


def _matrix(x, where: str) -> np.ndarray:
    try:
        M = np.array(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: not a numeric array ({exc})") from None
    if M.ndim != 2:
        raise ParseError(f"{where}: expected a 2-D array, got {M.ndim}-D")
    return M


def _vector(x, where: str) -> np.ndarray:
    try:
        v = np.array(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: not a numeric array ({exc})") from None
    if v.ndim != 1:
        raise ParseError(f"{where}: expected a 1-D array")
    return v


def _sequence(spec, steps: int, where: str) -> list:
    """Per-step vectors from an explicit list or ``{"constant": v}``."""
    if isinstance(spec, dict):
        _check_fields(spec, {"constant"}, where, "")
        v = _vector(spec["constant"], where)
        return [v] * steps
    return [_vector(v, f"{where}[{k}]") for k, v in enumerate(spec)]


# -- weights -----------------------------------------------------------------

def parse_weights(data, where: str = "weights") -> Mlp:
    layers = data["layers"] if isinstance(data, dict) else data
    if not isinstance(layers, list) or not layers:
        raise ShapeError(f"{where}: expected a nonempty list of layers")
    out, prev = [], None
    for idx, layer in enumerate(layers):
        try:
            W = np.array(layer["W"], dtype=float)
            b = np.array(layer["b"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ShapeError(f"{where}: layer {idx}: needs numeric 'W' and 'b' ({exc})") from None
        if W.ndim != 2 or b.ndim != 1:
            raise ShapeError(f"{where}: layer {idx}: W must be 2-D and b 1-D")
        if W.shape[0] != b.shape[0]:
            raise ShapeError(f"{where}: layer {idx}: W has {W.shape[0]} rows but b has length {b.shape[0]}")
        if prev is not None and W.shape[1] != prev:
            raise ShapeError(f"{where}: layer {idx}: W has {W.shape[1]} columns, previous layer outputs {prev}")
        prev = W.shape[0]
        out.append((W, b))
    return Mlp(tuple(out))


def load_weights(path) -> Mlp:
    """Network from a JSON list of ``{"W": rows, "b": vector}`` layers."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_weights(data, str(path))


def weights_to_json(mlp: Mlp) -> dict:
    return {"layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in mlp.layers]}


def save_weights(mlp: Mlp, path) -> None:
    Path(path).write_text(json.dumps(weights_to_json(mlp)))


# -- configs -----------------------------------------------------------------

@dataclasses.dataclass
class ScenarioConfig:
    scenario: Scenario
    horizon: int
    mode: str
    workers: int
    seed: int
    settings: SolverSettings
    name: str
    path: Path | None
    raw: dict
    config_hash: str

    @property
    def base_dir(self) -> Path:
        return self.path.parent if self.path is not None else Path.cwd()


def _pair_key(key: str, where: str) -> tuple:
    try:
        i, j = (int(s) for s in key.split(","))
    except ValueError:
        raise ParseError(f"{where}: pair key {key!r} must look like 'i,j'") from None
    return i, j


def _agent(spec: dict, text: str, period, steps: int, n_u: int = 1) -> AgentModel:
    _check_fields(spec, AGENT_FIELDS, f"agent {spec.get('id', '?')}", text)
    if "id" not in spec:
        raise ParseError("agent without an 'id'")
    i = int(spec["id"])
    where = f"agent {i}"
    if spec.get("static", False):
        states = [_vector(s, f"{where}.states") for s in spec.get("states", [])]
        if not states:
            raise ParseError(f"{where}: static agent needs 'states'")
        return AgentModel.static(i, states, n_u)
    forms = [k for k in ("discrete", "continuous") if k in spec]
    if len(forms) != 1:
        raise ParseError(f"{where}: give exactly one of 'discrete' or 'continuous'")
    model = spec[forms[0]]
    _check_fields(model, MODEL_FIELDS, f"{where}.{forms[0]}", text)
    A = _matrix(model["A_self"], f"{where}.A_self")
    nbrs = tuple((int(j), _matrix(M, f"{where}.A_neighbors.{j}")) for j, M in model.get("A_neighbors", {}).items())
    B = _matrix(model["B"], f"{where}.B")
    L = _matrix(model["L"], f"{where}.L") if "L" in model else None
    if forms[0] == "continuous":
        if period is None:
            raise ParseError(f"{where}: continuous model needs system.sample_period")
        d = zoh_discretize(CtModel(A, nbrs, B, float(period), L))
        A, nbrs, B, L = d.A_self, d.A_neighbors, d.B, d.L
    w = _sequence(spec["w"], steps, f"{where}.w") if "w" in spec else [np.zeros(A.shape[0])] * steps
    if "d" in spec:
        if L is None:
            raise ParseError(f"{where}: 'd' given without an 'L' matrix")
        d_seq = _sequence(spec["d"], steps, f"{where}.d")
        if len(w) < len(d_seq):
            w = w + [np.zeros(A.shape[0])] * (len(d_seq) - len(w))
        w = [wk + L @ dk for wk, dk in zip(w, d_seq)] + w[len(d_seq):]
    return AgentModel(
        id=i, A_self=A, A_neighbors=nbrs, B=B,
        u_lower=_vector(spec["u_lower"], f"{where}.u_lower"),
        u_upper=_vector(spec["u_upper"], f"{where}.u_upper"),
        w_seq=tuple(w),
    )


def build_graph(raw: dict, text: str, steps: int) -> NeighborGraph:
    system = raw.get("system")
    if system is None:
        raise ParseError("missing 'system' block")
    _check_fields(system, SYSTEM_FIELDS, "system", text)
    period = system.get("sample_period")
    specs = system.get("agents", [])
    dynamic = [_agent(a, text, period, steps) for a in specs if not a.get("static", False)]
    n_u = dynamic[0].n_u if dynamic else 1
    static = [_agent(a, text, period, steps, n_u) for a in specs if a.get("static", False)]
    return NeighborGraph(dynamic + static)


def load_networks(raw: dict, graph: NeighborGraph, base: Path, text: str) -> dict:
    block = raw.get("networks")
    if block is None:
        raise ParseError("missing 'networks' block")
    _check_fields(block, NETWORK_FIELDS, "networks", text)
    T = _matrix(block["input_transform"], "networks.input_transform") if "input_transform" in block else None
    nets = {}
    for key, ref in block.get("files", {}).items():
        pair = _pair_key(key, "networks.files")
        mlp = load_weights(base / ref)
        nets[pair] = compose_input(mlp, T) if T is not None else mlp
    return nets


def _initial(raw: dict, graph: NeighborGraph, text: str) -> dict:
    block = raw.get("initial", {})
    _check_fields(block, INITIAL_FIELDS, "initial", text)
    out = {}
    default = block.get("default")
    per = {int(k): v for k, v in block.get("agents", {}).items()}
    for i in graph.dynamic_ids:
        spec = per.get(i, default)
        if spec is None:
            continue
        try:
            out[i] = Box(_vector(spec["lower"], f"initial {i}.lower"), _vector(spec["upper"], f"initial {i}.upper"))
        except KeyError as exc:
            raise ParseError(f"initial {i}: missing {exc}") from None
    return out


def _uncertainty(raw: dict, graph: NeighborGraph, text: str):
    block = raw.get("uncertainty")
    if block is None:
        return None
    _check_fields(block, UNCERTAINTY_FIELDS, "uncertainty", text)
    if ("delta" in block) == ("vertices" in block):
        raise ParseError("uncertainty: give exactly one of 'delta' or 'vertices'")
    if "delta" in block:
        delta = float(block["delta"])
        if delta < 0:
            raise ParseError("uncertainty.delta must be nonnegative")
        return UncertaintySpec.scaled(graph, delta)
    A, B = {}, {}
    for k, v in block["vertices"].items():
        i = int(k)
        _check_fields(v, {"A", "B"}, f"uncertainty.vertices.{k}", text)
        if "A" in v:
            A[i] = tuple(_matrix(m, f"uncertainty {i}.A") for m in v["A"])
        if "B" in v:
            B[i] = tuple(_matrix(m, f"uncertainty {i}.B") for m in v["B"])
    return UncertaintySpec(A, B)


def _settings(raw: dict, text: str) -> SolverSettings:
    block = raw.get("solver", {})
    allowed = {f.name for f in dataclasses.fields(SolverSettings)}
    _check_fields(block, allowed, "solver", text)
    return SolverSettings(**block)


def load_config(path, steps: int | None = None) -> ScenarioConfig:
    """Parse and validate a scenario config.

    ``steps`` overrides the horizon; constant ``w``/``d`` forms are
    expanded to cover it.

    Raises:
        ParseError: malformed JSON or an unknown field (with line numbers).
        ScenarioValidationError: the scenario violates model invariants.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    return parse_config(text, path, steps)


def parse_config(text: str, path: Path | None = None, steps: int | None = None) -> ScenarioConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path or 'config'}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    _check_fields(raw, TOP_FIELDS, "config", text)
    horizon = int(raw.get("horizon", 1)) if steps is None else int(steps)
    if horizon < 0:
        raise ParseError("horizon must be nonnegative")
    mode = raw.get("mode", "per-agent")
    if mode not in MODES:
        raise ParseError(f"mode must be one of {MODES}, got {mode!r}")
    graph = build_graph(raw, text, horizon)
    base = path.parent if path is not None else Path.cwd()
    nets = load_networks(raw, graph, base, text)
    init = _initial(raw, graph, text)
    unc = _uncertainty(raw, graph, text)
    refs = {int(k): _vector(v, f"references.{k}") for k, v in raw.get("references", {}).items()} or None
    scenario = validate_scenario(graph, nets, init, unc, refs)
    return ScenarioConfig(
        scenario=scenario,
        horizon=horizon,
        mode=mode,
        workers=int(raw.get("workers", 1)),
        seed=int(raw.get("seed", 0)),
        settings=_settings(raw, text),
        name=str(raw.get("name", path.stem if path else "scenario")),
        path=path,
        raw=raw,
        config_hash=hashlib.sha256(text.encode()).hexdigest(),
    )


# -- results -----------------------------------------------------------------

def result_to_json(result, cfg: ScenarioConfig, seed: int, settings: SolverSettings, extra: dict | None = None) -> dict:
    agents = {
        str(i): {"lower": [b.lower.tolist() for b in seq], "upper": [b.upper.tolist() for b in seq]}
        for i, seq in result.boxes.items()
    }
    doc = {
        "tool": "distreach",
        "version": __version__,
        "config": str(cfg.path) if cfg.path is not None else None,
        "config_hash": cfg.config_hash,
        "seed": seed,
        "settings": settings.to_dict(),
        "mode": result.mode,
        "horizon": result.horizon,
        "complete": result.complete,
        "failure": result.failure,
        "agents": agents,
        "solves": [r.to_dict() for r in result.records],
        "timing": {
            "wall_time": result.wall_time,
            "solve_time": result.solve_time,
            "step_times": result.step_times,
        },
    }
    if extra:
        doc.update(extra)
    return doc


def boxes_from_json(doc: dict) -> dict:
    return {
        int(i): [Box(np.array(lo), np.array(hi)) for lo, hi in zip(a["lower"], a["upper"])]
        for i, a in doc["agents"].items()
    }


def write_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1))


def read_result(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def export_csv(boxes: dict, out_dir, trajectories: dict | None = None) -> list:
    """One ``agent_<i>.csv`` per agent (step, coord, lower, upper) plus optional trajectory files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, seq in boxes.items():
        p = out_dir / f"agent_{i}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "coord", "lower", "upper"])
            for k, b in enumerate(seq):
                for c in range(b.dim):
                    w.writerow([k, c, repr(float(b.lower[c])), repr(float(b.upper[c]))])
        written.append(p)
    for i, X in (trajectories or {}).items():
        p = out_dir / f"trajectories_agent_{i}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "step"] + [f"x{c}" for c in range(X.shape[2])])
            for s in range(X.shape[0]):
                for k in range(X.shape[1]):
                    w.writerow([s, k] + [repr(float(v)) for v in X[s, k]])
        written.append(p)
    return written
