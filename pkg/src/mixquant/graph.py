"""Toy SwiGLU feed-forward block with rotation/permutation merging and
quantized inference at desk scale.

The Swish/elementwise-multiply region commutes with feature permutations,
so the down-projection input permutation is always merged into the
gate/up columns and down rows. The online block rotation at the
down-projection input is made function-preserving by folding its transpose
into the down weights.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bounds import check_prop2
from .data import ActivationSet, load_activations, save_activations
from .errors import DimensionError, NotRotationEquivariantError
from .hadamard import BlockRotation, HadamardSpec, block_rotation, rotate_block
from .permutation import Permutation
from .quantizers import QuantizerConfig, fake_quantize


def swish(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class FfnWeights:
    gate: np.ndarray  # d_model x d_ff
    up: np.ndarray  # d_model x d_ff
    down: np.ndarray  # d_ff x d_model

    def __post_init__(self):
        g, u, dn = (np.asarray(w, dtype=np.float64) for w in (self.gate, self.up, self.down))
        if g.shape != u.shape or g.shape[::-1] != dn.shape:
            raise DimensionError(
                f"inconsistent shapes gate={g.shape} up={u.shape} down={dn.shape}"
            )
        if not all(np.all(np.isfinite(w)) for w in (g, u, dn)):
            raise DimensionError("weights contain non-finite entries")
        object.__setattr__(self, "gate", g)
        object.__setattr__(self, "up", u)
        object.__setattr__(self, "down", dn)

    @property
    def d_model(self) -> int:
        return self.gate.shape[0]

    @property
    def d_ff(self) -> int:
        return self.gate.shape[1]


def ffn_forward(x, w: FfnWeights) -> np.ndarray:
    """y = (Swish(x gate) * (x up)) down."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.d_model:
        raise DimensionError(f"input d={x.shape[-1]}, weights expect {w.d_model}")
    return (swish(x @ w.gate) * (x @ w.up)) @ w.down


def merge_permutation(w: FfnWeights, p: Permutation) -> FfnWeights:
    """Absorb a d_ff permutation: gate/up columns gathered, down rows
    gathered. The forward map is unchanged (pure index moves)."""
    if p.d != w.d_ff:
        raise DimensionError(f"permutation is over {p.d}, d_ff is {w.d_ff}")
    return FfnWeights(w.gate[:, p.pi], w.up[:, p.pi], w.down[p.pi, :])


def _rotation_matrix(r, d: int) -> np.ndarray:
    if isinstance(r, HadamardSpec):
        if r.order != d:
            raise DimensionError(f"rotation order {r.order}, need {d}")
        return r.matrix
    if isinstance(r, BlockRotation):
        if r.d != d:
            raise DimensionError(f"rotation dimension {r.d}, need {d}")
        return r.dense()
    raise DimensionError(f"unsupported rotation type {type(r).__name__}")


def merge_rotation(w: FfnWeights, r, site: str) -> FfnWeights:
    """Fold a d_model rotation into the weight adjacent to the given site
    so the (rotation, linear) pair keeps its end-to-end map: a rotation
    applied to the input of gate (site "r1") or up (site "r2") becomes a
    left-multiplication of that weight.

    The Swish region is not rotation-equivariant, so merging across it
    (site "r3") is a hard error.
    """
    if site == "r3":
        raise NotRotationEquivariantError(
            "region not rotation-equivariant: cannot merge a rotation across Swish"
        )
    if site not in ("r1", "r2"):
        raise DimensionError(f"unknown merge site {site!r}")
    R = _rotation_matrix(r, w.d_model)
    if site == "r1":
        return FfnWeights(R @ w.gate, w.up, w.down)
    return FfnWeights(w.gate, R @ w.up, w.down)


@dataclass(frozen=True)
class GraphConfig:
    """Placement of rotations, the merged permutation, and quantizers.

    r1_r2: None, "merged_full_vector", or ("merged_block", b) — a
      function-preserving input rotation whose transpose is folded into
      gate and up.
    r3: None or ("online_block", b, Permutation-or-None) — the online block
      rotation at the down-projection input, with the permutation merged
      into surrounding weights and the inverse rotation folded into down.
    weight_quant / act_quant: optional QuantizerConfigs.
    """

    r1_r2: object = None
    r3: object = None
    weight_quant: QuantizerConfig | None = None
    act_quant: QuantizerConfig | None = None


@dataclass
class PipelineReport:
    stage_ranges: dict = field(default_factory=dict)
    r3_bound: object = None


def _quant_weight(wmat: np.ndarray, cfg: QuantizerConfig | None) -> np.ndarray:
    if cfg is None:
        return wmat
    # per-output-channel: quantize along columns, so pass channels-first
    return fake_quantize(wmat.T, cfg).T


def _quant_act(a: np.ndarray, cfg: QuantizerConfig | None) -> np.ndarray:
    return a if cfg is None else fake_quantize(a, cfg)


def run_pipeline(x, w: FfnWeights, cfg: GraphConfig):
    """Execute the quantization graph and report per-stage statistics.

    Returns (outputs, PipelineReport). At full precision (no quantizers)
    the output equals ffn_forward up to rotation round-off, because every
    inserted operator is compensated by a folded inverse.
    """
    x = np.asarray(x, dtype=np.float64)
    report = PipelineReport()
    gate, up, down = w.gate, w.up, w.down

    # input rotation: x is rotated online, R^T folded into gate/up
    if cfg.r1_r2 is not None:
        if cfg.r1_r2 == "merged_full_vector":
            rot_in = block_rotation(w.d_model, w.d_model)
        elif isinstance(cfg.r1_r2, tuple) and cfg.r1_r2[0] == "merged_block":
            rot_in = block_rotation(w.d_model, cfg.r1_r2[1])
        else:
            raise DimensionError(f"bad r1_r2 config {cfg.r1_r2!r}")
        Rin = rot_in.dense()
        x = rotate_block(x, rot_in)
        gate = Rin.T @ gate
        up = Rin.T @ up
    report.stage_ranges["input"] = float(np.abs(x).max())

    # permutation merged through the Swish region, online rotation at r3
    rot3 = None
    if cfg.r3 is not None:
        if not (isinstance(cfg.r3, tuple) and cfg.r3[0] == "online_block"):
            raise DimensionError(f"bad r3 config {cfg.r3!r}")
        _, b3, perm = cfg.r3
        if perm is not None:
            if perm.d != w.d_ff:
                raise DimensionError(
                    f"r3 permutation is over {perm.d}, d_ff is {w.d_ff}"
                )
            gate = gate[:, perm.pi]
            up = up[:, perm.pi]
            down = down[perm.pi, :]
        rot3 = block_rotation(w.d_ff, b3)
        down = rot3.dense().T @ down

    gate_q = _quant_weight(gate, cfg.weight_quant)
    up_q = _quant_weight(up, cfg.weight_quant)
    down_q = _quant_weight(down, cfg.weight_quant)

    xq = _quant_act(x, cfg.act_quant)
    h = swish(xq @ gate_q) * (xq @ up_q)
    report.stage_ranges["hidden"] = float(np.abs(h).max())

    if rot3 is not None:
        report.r3_bound = check_prop2(h, rot3).summary()
        h = rotate_block(h, rot3)
        report.stage_ranges["hidden_rotated"] = float(np.abs(h).max())

    hq = _quant_act(h, cfg.act_quant)
    y = hq @ down_q
    report.stage_ranges["output"] = float(np.abs(y).max())
    return y, report


def pipeline_mse(x, w: FfnWeights, cfg: GraphConfig) -> float:
    """Mean squared output error of the quantized pipeline against the
    full-precision forward pass."""
    y, _ = run_pipeline(x, w, cfg)
    ref = ffn_forward(x, w)
    return float(((y - ref) ** 2).mean())


def config_to_dict(cfg: GraphConfig) -> dict:
    def enc_rot(v):
        if v is None or isinstance(v, str):
            return v
        if v[0] == "merged_block":
            return ["merged_block", int(v[1])]
        _, b, perm = v
        return ["online_block", int(b), None if perm is None else json.loads(perm.to_json())]

    def enc_q(q):
        return None if q is None else asdict(q)

    return {
        "r1_r2": enc_rot(cfg.r1_r2),
        "r3": enc_rot(cfg.r3),
        "weight_quant": enc_q(cfg.weight_quant),
        "act_quant": enc_q(cfg.act_quant),
    }


def config_from_dict(obj: dict) -> GraphConfig:
    def dec_rot(v):
        if v is None or isinstance(v, str):
            return v
        if v[0] == "merged_block":
            return ("merged_block", int(v[1]))
        perm = None if v[2] is None else Permutation.from_json(json.dumps(v[2]))
        return ("online_block", int(v[1]), perm)

    def dec_q(q):
        return None if q is None else QuantizerConfig(**q)

    return GraphConfig(
        r1_r2=dec_rot(obj.get("r1_r2")),
        r3=dec_rot(obj.get("r3")),
        weight_quant=dec_q(obj.get("weight_quant")),
        act_quant=dec_q(obj.get("act_quant")),
    )


def save_ffn_weights(directory, w: FfnWeights, cfg: GraphConfig | None = None) -> Path:
    """Write the three matrices as .mixq files plus a manifest.json naming
    them and (optionally) the graph config. Returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = {"gate": w.gate, "up": w.up, "down": w.down}
    for name, mat in names.items():
        save_activations(ActivationSet(mat.astype(np.float32)), directory / f"{name}.mixq")
    manifest = {
        "matrices": {name: f"{name}.mixq" for name in names},
        "d_model": w.d_model,
        "d_ff": w.d_ff,
        "config": None if cfg is None else config_to_dict(cfg),
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_ffn_weights(manifest_path):
    """Read a weight manifest; returns (FfnWeights, GraphConfig or None)."""
    manifest_path = Path(manifest_path)
    obj = json.loads(manifest_path.read_text())
    mats = {
        name: load_activations(manifest_path.parent / rel).data
        for name, rel in obj["matrices"].items()
    }
    w = FfnWeights(mats["gate"], mats["up"], mats["down"])
    cfg = None if obj.get("config") is None else config_from_dict(obj["config"])
    return w, cfg
