"""Causal preference network: per-feature reconstruction sub-networks whose
masked first layers define a weighted adjacency over user and item features.

Node order is ``[user features | item features]``; ``D = q_u + q_v``.  The
first-layer weights of all sub-networks are stored packed in one ``D x D*M``
matrix whose column block ``d`` is the input layer of sub-network ``d``.  Row
``d`` of that block is pinned to zero so feature ``d`` never predicts itself.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .optim import Adam


@dataclass
class DagHyper:
    alpha: float = 1e3        # acyclicity penalty
    beta: float = 1e-2        # L1 on first-layer weights
    chi: float = 1e-2         # squared L2 on hidden and output weights
    xi: float = 1e4           # forbidden item -> user block
    lam: float = 1e-2         # item columns must keep a parent
    eps_norm: float = 1e-8
    edge_threshold: float = 0.3

    def __post_init__(self):
        for name in ("alpha", "beta", "chi", "xi", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.eps_norm <= 0 or self.edge_threshold <= 0:
            raise ValueError("eps_norm and edge_threshold must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DagParams:
    q_u: int
    q_v: int
    hidden: int                       # M
    layers: int                       # H
    w1: np.ndarray                    # D x (D*M), block d = input layer of node d
    w_mid: list[np.ndarray] = field(default_factory=list)   # H-2 shared M x M
    w_out: np.ndarray | None = None   # M x D, column d = output layer of node d

    @property
    def d(self) -> int:
        return self.q_u + self.q_v

    @classmethod
    def init(cls, q_u: int, q_v: int, hidden: int = 16, layers: int = 3, seed=0) -> "DagParams":
        if layers < 2 or hidden < 1:
            raise ValueError("need layers >= 2 and hidden >= 1")
        rng = np.random.default_rng(seed)
        d = q_u + q_v
        a1 = 1.0 / math.sqrt(d * hidden)
        am = 1.0 / math.sqrt(hidden)
        w1 = rng.uniform(-a1, a1, size=(d, d * hidden))
        w_mid = [rng.uniform(-am, am, size=(hidden, hidden)) for _ in range(layers - 2)]
        w_out = rng.uniform(-am, am, size=(hidden, d))
        p = cls(q_u, q_v, hidden, layers, w1, w_mid, w_out)
        p.apply_mask()
        return p

    def self_loop_mask(self) -> np.ndarray:
        """Boolean mask of the structurally-zero entries of ``w1``."""
        m = self.hidden
        mask = np.zeros_like(self.w1, dtype=bool)
        for k in range(self.d):
            mask[k, k * m:(k + 1) * m] = True
        return mask

    def apply_mask(self) -> None:
        m = self.hidden
        for k in range(self.d):
            self.w1[k, k * m:(k + 1) * m] = 0.0

    def block(self, d: int) -> np.ndarray:
        """First-layer matrix (D x M) of sub-network ``d``."""
        return self.w1[:, d * self.hidden:(d + 1) * self.hidden]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"dag.w1": self.w1, "dag.w_out": self.w_out}
        for i, w in enumerate(self.w_mid):
            out[f"dag.w_mid.{i}"] = w
        return out

    def copy(self) -> "DagParams":
        return DagParams(self.q_u, self.q_v, self.hidden, self.layers, self.w1.copy(),
                         [w.copy() for w in self.w_mid], self.w_out.copy())

    def to_dict(self) -> dict:
        return {"q_u": self.q_u, "q_v": self.q_v, "M": self.hidden, "H": self.layers,
                "w1": self.w1.tolist(), "w_mid": [w.tolist() for w in self.w_mid],
                "w_out": self.w_out.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DagParams":
        q_u, q_v, m = int(d["q_u"]), int(d["q_v"]), int(d["M"])
        dd = q_u + q_v
        return cls(q_u, q_v, m, int(d["H"]),
                   np.array(d["w1"], dtype=np.float64).reshape(dd, dd * m),
                   [np.array(w, dtype=np.float64).reshape(m, m) for w in d["w_mid"]],
                   np.array(d["w_out"], dtype=np.float64).reshape(m, dd))


class DagTape:
    """Graph leaves for one evaluation of the DAG learner."""

    def __init__(self, params: DagParams, requires_grad: bool = True):
        self.params = params
        self.w1 = ad.var(params.w1, requires_grad)
        self.w_mid = [ad.var(w, requires_grad) for w in params.w_mid]
        self.w_out = ad.var(params.w_out, requires_grad)

    def leaves(self) -> dict[str, ad.Node]:
        out = {"dag.w1": self.w1, "dag.w_out": self.w_out}
        for i, w in enumerate(self.w_mid):
            out[f"dag.w_mid.{i}"] = w
        return out

    def grads(self) -> dict[str, np.ndarray]:
        g = {k: n.grad for k, n in self.leaves().items()}
        g["dag.w1"] = np.where(self.params.self_loop_mask(), 0.0, g["dag.w1"])
        return g


# ---------------------------------------------------------------- graph builders

def reconstruct_node(tape: DagTape, x: ad.Node) -> ad.Node:
    p = tape.params
    if x.shape[1] != p.d:
        raise ad.ShapeError(f"reconstruct: input width {x.shape[1]} but D = {p.d}")
    m = p.hidden
    z = ad.relu(ad.matmul(x, tape.w1))
    cols = []
    for d in range(p.d):
        h = ad.slice_cols(z, d * m, (d + 1) * m)
        for w in tape.w_mid:
            h = ad.relu(ad.matmul(h, w))
        cols.append(ad.matmul(h, ad.slice_cols(tape.w_out, d, d + 1)))
    return ad.concat_cols(*cols)


def adjacency_node(tape: DagTape) -> ad.Node:
    p = tape.params
    m = p.hidden
    cols = [ad.row_l2_norms(ad.slice_cols(tape.w1, d * m, (d + 1) * m)) for d in range(p.d)]
    return ad.concat_cols(*cols)


def preference_node(tape: DagTape, users: ad.Node, rounds: int = 1) -> ad.Node:
    """Item-feature columns of the reconstruction of ``[u | 0]``.

    With ``rounds > 1`` the item estimates are fed back as inputs, so an item
    feature whose parents are other item features sees their estimates
    instead of zeros.  ``rounds = q_v`` reaches every item in a DAG.
    """
    p = tape.params
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    items = ad.constant(np.zeros((users.shape[0], p.q_v)))
    for _ in range(rounds):
        out = reconstruct_node(tape, ad.concat_cols(users, items))
        items = ad.slice_cols(out, p.q_u, p.d)
    return items


def dag_loss_terms(tape: DagTape, x: ad.Node, hyper: DagHyper, regularize: bool = True,
                   rs_constraints: bool = True, adjacency: ad.Node | None = None
                   ) -> dict[str, ad.Node]:
    """Named scalar loss nodes; the objective is the sum of the returned terms.

    ``regularize=False`` keeps only the reconstruction term.
    """
    p = tape.params
    n = x.shape[0]
    if n == 0:
        raise ValueError("dag loss needs a nonempty batch")
    terms: dict[str, ad.Node] = {}
    resid = ad.sub(x, reconstruct_node(tape, x))
    terms["rec"] = ad.scale(ad.frobenius_sq(resid), 1.0 / n)
    if not regularize:
        return terms
    a = adjacency if adjacency is not None else adjacency_node(tape)
    gap = ad.add(ad.trace_expm_hsq(a), ad.constant(-float(p.d)))
    terms["acyc"] = ad.scale(ad.frobenius_sq(gap), hyper.alpha)
    terms["l1"] = ad.scale(ad.l1_sum(tape.w1), hyper.beta)
    sq = [ad.frobenius_sq(w) for w in tape.w_mid] + [ad.frobenius_sq(tape.w_out)]
    terms["l2"] = ad.scale(ad.sum_nodes(sq), hyper.chi)
    if rs_constraints:
        terms["zero"] = ad.scale(_zero_block(a, p), hyper.xi)
        terms["nor"] = ad.scale(_no_root(a, p, hyper.eps_norm), hyper.lam)
    return terms


def _zero_block(a: ad.Node, p: DagParams) -> ad.Node:
    # rows q_u.. of the first q_u columns: transpose, then slice columns
    block = ad.slice_cols(ad.transpose(ad.slice_cols(a, 0, p.q_u)), p.q_u, p.d)
    return ad.l1_sum(block)


def _no_root(a: ad.Node, p: DagParams, eps: float) -> ad.Node:
    col_norms = ad.row_l2_norms(ad.transpose(ad.slice_cols(a, p.q_u, p.d)))
    logs = ad.log(ad.add(col_norms, ad.constant(np.full((p.q_v, 1), eps))))
    return ad.scale(ad.scalar_sum(logs), -1.0)


# ---------------------------------------------------------------- array API

def reconstruct(params: DagParams, x) -> np.ndarray:
    tape = DagTape(params, requires_grad=False)
    return reconstruct_node(tape, ad.constant(x)).value


def adjacency(params: DagParams) -> np.ndarray:
    m = params.hidden
    return np.stack([np.sqrt((params.block(d) ** 2).sum(axis=1)) for d in range(params.d)], axis=1)


def infer_preference(params: DagParams, users, rounds: int = 1) -> np.ndarray:
    """Expected preferred-item features for each user row (or a single vector)."""
    u = np.asarray(users, dtype=np.float64)
    single = u.ndim == 1
    tape = DagTape(params, requires_grad=False)
    out = preference_node(tape, ad.constant(u.reshape(1, -1) if single else u), rounds).value
    return out[0] if single else out


def _objective(params: DagParams, x, hyper: DagHyper, rs_constraints: bool, regularize: bool = True):
    tape = DagTape(params)
    terms = dag_loss_terms(tape, ad.constant(x), hyper, regularize=regularize,
                           rs_constraints=rs_constraints)
    root = ad.sum_nodes(list(terms.values()))
    ad.backward(root)
    return float(root.value[0, 0]), tape.grads(), {k: float(v.value[0, 0]) for k, v in terms.items()}


def loss_dag(params: DagParams, x, hyper: DagHyper):
    """Reconstruction + acyclicity + sparsity + weight decay; returns (value, grads)."""
    value, grads, _ = _objective(params, x, hyper, rs_constraints=False)
    return value, grads


def loss_dag_rs(params: DagParams, x, hyper: DagHyper):
    """:func:`loss_dag` plus the item->user block penalty and the no-root term."""
    value, grads, _ = _objective(params, x, hyper, rs_constraints=True)
    return value, grads


def export_graph(params: DagParams, threshold: float, names: list[str] | None = None):
    """Directed edges ``(source, target, weight)`` with weight above ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    a = adjacency(params)
    names = names or [f"x{i}" for i in range(params.d)]
    edges = []
    for k, d in zip(*np.nonzero(a > threshold)):
        edges.append((names[k], names[d], float(a[k, d])))
    return edges


def edges_to_dot(edges, names: list[str]) -> str:
    lines = ["digraph preference {"]
    for n in names:
        lines.append(f'  "{n}";')
    for s, t, w in edges:
        lines.append(f'  "{s}" -> "{t}" [label="{w:.4f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def edges_to_csv(edges) -> str:
    rows = ["source,target,weight"] + [f"{s},{t},{w:.6f}" for s, t, w in edges]
    return "\n".join(rows) + "\n"


def fit(x, q_u: int, hyper: DagHyper | None = None, hidden: int = 16, layers: int = 3,
        steps: int = 2000, lr: float = 1e-3, batch_size: int | None = None, seed=0,
        params: DagParams | None = None, rs_constraints: bool = True, regularize: bool = True,
        callback=None) -> DagParams:
    """Fit the DAG learner alone on ``x`` with Adam.

    ``batch_size=None`` uses the full batch every step.  ``callback(step, params,
    terms)`` is called after every update.
    """
    hyper = hyper or DagHyper()
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if params is None:
        params = DagParams.init(q_u, x.shape[1] - q_u, hidden, layers, seed=rng)
    arrays = params.arrays()
    opt = Adam(arrays, lr=lr)
    rs_constraints = rs_constraints and regularize
    n = len(x)
    for step in range(steps):
        if batch_size is None or batch_size >= n:
            xb = x
        else:
            xb = x[rng.choice(n, batch_size, replace=False)]
        _, grads, terms = _objective(params, xb, hyper, rs_constraints, regularize)
        opt.step(arrays, grads)
        params.apply_mask()
        if callback is not None:
            callback(step, params, terms)
    return params
