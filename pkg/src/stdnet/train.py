"""Adam optimization of the deformation network on (box, mesh) pairs."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tape, Tensor, concat_rows
from .errors import DataFormatError, EmptyInputError, NumericalError
from .fixtures import DatasetPair, make_fixtures  # noqa: F401  (re-exported)
from .losses import chamfer_loss, sample_surface, total_loss
from .mesh import TriangleMesh
from .network import BlockOutput, DeformationNetwork, NetworkConfig, save_checkpoint

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

CURVE_HEADER = "iteration,l_cd,l_lap,l_edge,L_all,val_cd"
_VAL_STREAM = 2  # train draws use seed stream 1, validation stream 2


def _adam_update_numpy(p, g, m, v, wd, b1, b2, eps_c, bc2, s1):
    gi = g + wd * p
    m *= b1
    m += (1.0 - b1) * gi
    v *= b2
    v += (1.0 - b2) * (gi * gi)
    p -= (m / (np.sqrt(v / bc2) + eps_c)) * s1


if njit is not None:
    @njit(cache=True)
    def _adam_update(p, g, m, v, wd, b1, b2, eps_c, bc2, s1):  # pragma: no cover
        for i in range(p.size):
            gi = g[i] + wd * p[i]
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
            m[i] = mi
            v[i] = vi
            p[i] -= (mi / (np.sqrt(vi / bc2) + eps_c)) * s1
else:
    _adam_update = _adam_update_numpy


@dataclass
class TrainConfig:
    """Training hyperparameters; the JSON form uses exactly these field names."""

    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    iterations: int = 2000
    eval_every: int = 10
    lambda_lap: float = 0.3
    lambda_edge: float = 0.1
    samples: int = 1000
    seed: int = 0
    hops: int = 2
    channels: int = 192
    layers_per_block: int = 14
    blocks: int = 3
    normalization: str = "sym"
    residual_every: int = 2
    use_bias: bool = True

    def validate(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        # iterations == 0 is allowed as an explicit no-op (untrained network).
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        self.network_config().validate()

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            hops=self.hops, channels=self.channels,
            layers_per_block=self.layers_per_block, blocks=self.blocks,
            normalization=self.normalization, residual_every=self.residual_every,
            use_bias=self.use_bias, seed=self.seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid config JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise DataFormatError("config JSON must be an object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataFormatError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


class Adam:
    """Adam with bias correction and optional L2 weight decay folded into g.

    The per-parameter update runs as one fused pass over the data (numba when
    available); at a couple hundred weight matrices per step the update is
    memory-bound, so pass count is what matters.
    """

    def __init__(self, params: dict[str, np.ndarray], lr: float = 3e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}
        self._zero = {name: np.zeros(p.size) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {p.shape} for {name}")
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        bc2 = 1.0 - self.beta2 ** self.t
        s1 = self.lr / (1.0 - self.beta1 ** self.t)
        for name, p in self.params.items():
            g = grads.get(name)
            g = self._zero[name] if g is None else g.reshape(-1)
            _adam_update(p.reshape(-1), g, self.m[name].reshape(-1),
                         self.v[name].reshape(-1), self.weight_decay,
                         self.beta1, self.beta2, self.eps, bc2, s1)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: Adam | None, config: TrainConfig) -> Adam:
    """One functional Adam update; creates the state on first use."""
    if state is None:
        state = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                     eps=config.eps, weight_decay=config.weight_decay)
    state.step(grads)
    return state


@dataclass
class PreparedPair:
    pair: DatasetPair
    part_meshes: list[TriangleMesh]
    plans: list
    target_vertices: np.ndarray
    target_faces: np.ndarray


@dataclass
class TrainResult:
    initial_val_chamfer: float
    best_val_chamfer: float
    best_iteration: int
    rows: list
    checkpoint_path: "str | None" = None
    curve_path: "str | None" = None


def _prepare(net: DeformationNetwork, dataset: list[DatasetPair]) -> list[PreparedPair]:
    prepared = []
    for pair in dataset:
        if pair.target.n_faces == 0:
            raise EmptyInputError(f"pair {pair.identifier!r} has an empty target")
        parts = pair.source_meshes()
        prepared.append(PreparedPair(
            pair, parts, [net.plan(m) for m in parts],
            np.array(pair.target.vertices), np.array(pair.target.faces)))
    return prepared


def _forward_union(net: DeformationNetwork, tape: Tape,
                   bound: dict[str, Tensor], prep: PreparedPair) -> list[BlockOutput]:
    """Forward every part and concatenate per-block outputs into one mesh."""
    per_part = [net.forward(tape, mesh, plan=plan, bound=bound)
                for mesh, plan in zip(prep.part_meshes, prep.plans)]
    if len(per_part) == 1:
        return per_part[0]
    union = []
    for b in range(len(net.blocks)):
        outs = [parts[b] for parts in per_part]
        offsets = np.cumsum([0] + [o.n_vertices for o in outs])[:-1]
        faces = np.concatenate([o.faces + off for o, off in zip(outs, offsets)])
        edges = np.concatenate([o.edges + off for o, off in zip(outs, offsets)])
        union.append(BlockOutput(
            faces, edges,
            concat_rows([o.v_in for o in outs]),
            concat_rows([o.v_out for o in outs])))
    return union


def _validation_chamfer(net: DeformationNetwork, prepared: list[PreparedPair],
                        config: TrainConfig) -> float:
    """Mean chamfer of the final block against the targets, fixed sample draws."""
    rng = np.random.default_rng([config.seed, _VAL_STREAM])
    values = []
    for prep in prepared:
        tape = Tape()
        final = _forward_union(net, tape, net.bind(tape), prep)[-1]
        pred = sample_surface(final.v_out.value, final.faces, config.samples, rng)
        target = sample_surface(prep.target_vertices, prep.target_faces,
                                config.samples, rng)
        values.append(chamfer_loss(pred, target).item())
    return float(np.mean(values))


def train(net: DeformationNetwork, dataset: list[DatasetPair], config: TrainConfig,
          out_dir=None, supervise_blocks=None, log=None) -> TrainResult:
    """Optimize ``net`` in place; keeps the best-by-validation parameters.

    Every iteration runs forward on all pairs (part meshes concatenated per
    block), sums the hybrid loss over blocks and pairs, backpropagates, and
    takes one Adam step. Validation chamfer is measured before training and
    every ``eval_every`` iterations with fixed draws, and the best snapshot is
    restored into the network (and written to ``out_dir``) at the end. A
    non-finite loss or gradient aborts with the best checkpoint retained.
    """
    config.validate()
    if not dataset:
        raise EmptyInputError("training needs a non-empty dataset")
    prepared = _prepare(net, dataset)
    optimizer = Adam(net.parameters(), lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, eps=config.eps,
                     weight_decay=config.weight_decay)
    checkpoint_path = curve_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, "checkpoint.stdn")
        curve_path = os.path.join(out_dir, "curve.csv")

    initial_val = _validation_chamfer(net, prepared, config)
    best_val, best_iteration, best_state = initial_val, 0, net.state()
    rows = [(0, "", "", "", "", repr(initial_val))]
    if log:
        log(f"iteration 0: val_cd={initial_val:.6g}")

    def finish(aborted=False):
        net.load_state(best_state)
        if checkpoint_path:
            save_checkpoint(checkpoint_path, net)
        if curve_path:
            _write_curve(curve_path, rows)
        if not aborted and log:
            log(f"best val_cd={best_val:.6g} at iteration {best_iteration}")

    for it in range(1, config.iterations + 1):
        rng = np.random.default_rng([config.seed, 1, it])
        tape = Tape()
        bound = net.bind(tape)
        try:
            loss = None
            cd = lap = edge = 0.0
            for prep in prepared:
                blocks = _forward_union(net, tape, bound, prep)
                target = sample_surface(prep.target_vertices, prep.target_faces,
                                        config.samples, rng)
                pair_loss, report = total_loss(
                    blocks, target, config.samples, rng,
                    lambda_lap=config.lambda_lap, lambda_edge=config.lambda_edge,
                    supervise_blocks=supervise_blocks)
                loss = pair_loss if loss is None else loss + pair_loss
                cd += report.l_cd
                lap += report.l_lap
                edge += report.l_edge
            total = loss.item()
            if not np.isfinite(total):
                raise NumericalError(f"non-finite loss at iteration {it}")
            loss.backward()
            optimizer.step({name: t.grad for name, t in bound.items()})

            val_repr = ""
            if it % config.eval_every == 0 or it == config.iterations:
                val = _validation_chamfer(net, prepared, config)
                val_repr = repr(val)
                if val < best_val:
                    best_val, best_iteration, best_state = val, it, net.state()
                if log:
                    log(f"iteration {it}: L_all={total:.6g} val_cd={val:.6g}")
        except NumericalError:
            finish(aborted=True)
            raise
        rows.append((it, repr(cd), repr(lap), repr(edge), repr(total), val_repr))

    finish()
    return TrainResult(initial_val, best_val, best_iteration, rows,
                       checkpoint_path, curve_path)


def _write_curve(path, rows) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(CURVE_HEADER + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
