"""Scoring head: NeuMF (GMF path + MLP path) or its linear variant, and BPR loss.

The linear variant keeps the GMF path and swaps the MLP tower for a single
affine map of ``[user | item]``; without the GMF product a user-only term
would not change the ranking of items for that user.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad

VARIANTS = ("neumf", "linear")
MLP_WIDTHS = (64, 32, 16)


class PredictorParams:
    def __init__(self, variant: str, d_user: int, q_v: int, embed: int,
                 arrays: dict[str, np.ndarray]):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.variant = variant
        self.d_user = d_user
        self.q_v = q_v
        self.embed = embed
        self.w = arrays

    @classmethod
    def init(cls, variant: str, d_user: int, q_v: int, embed: int = 16, seed=0) -> "PredictorParams":
        if embed < 1:
            raise ValueError("embedding width must be >= 1")
        rng = np.random.default_rng(seed)

        def glorot(n_in, n_out):
            a = math.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-a, a, size=(n_in, n_out))

        w = {"phi.gmf_user": glorot(d_user, embed), "phi.gmf_item": glorot(q_v, embed)}
        if variant == "neumf":
            widths = (d_user + q_v,) + MLP_WIDTHS
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                w[f"phi.mlp_w.{i}"] = glorot(a, b)
                w[f"phi.mlp_b.{i}"] = np.zeros((1, b))
            w["phi.combine"] = glorot(embed + MLP_WIDTHS[-1], 1)
        else:
            w["phi.combine"] = glorot(embed, 1)
            w["phi.lin_w"] = glorot(d_user + q_v, 1)
            w["phi.lin_b"] = np.zeros((1, 1))
        return cls(variant, d_user, q_v, embed, w)

    def arrays(self) -> dict[str, np.ndarray]:
        return self.w

    def copy(self) -> "PredictorParams":
        return PredictorParams(self.variant, self.d_user, self.q_v, self.embed,
                               {k: v.copy() for k, v in self.w.items()})

    def to_dict(self) -> dict:
        return {"variant": self.variant, "d_user": self.d_user, "q_v": self.q_v,
                "embed": self.embed,
                "arrays": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                           for k, v in self.w.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorParams":
        arrays = {k: np.array(a["values"], dtype=np.float64).reshape(a["shape"])
                  for k, a in d["arrays"].items()}
        return cls(d["variant"], int(d["d_user"]), int(d["q_v"]), int(d["embed"]), arrays)


class PredictorTape:
    def __init__(self, params: PredictorParams, requires_grad: bool = True):
        self.params = params
        self.nodes = {k: ad.var(v, requires_grad) for k, v in params.w.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {k: n.grad for k, n in self.nodes.items()}


def score_node(tape: PredictorTape, users: ad.Node, items: ad.Node) -> ad.Node:
    """Raw ranking score (B x 1) for paired user representations and items."""
    p = tape.params
    if users.shape[1] != p.d_user or items.shape[1] != p.q_v:
        raise ad.ShapeError(f"score: inputs of width ({users.shape[1]}, {items.shape[1]}) "
                            f"but the predictor expects ({p.d_user}, {p.q_v})")
    if users.shape[0] != items.shape[0]:
        raise ad.ShapeError(f"score: {users.shape[0]} users vs {items.shape[0]} items")
    n = tape.nodes
    gmf = ad.hadamard(ad.matmul(users, n["phi.gmf_user"]), ad.matmul(items, n["phi.gmf_item"]))
    ones = ad.constant(np.ones((users.shape[0], 1)))
    joint = ad.concat_cols(users, items)
    if p.variant == "neumf":
        h = joint
        for i in range(len(MLP_WIDTHS)):
            h = ad.relu(ad.add(ad.matmul(h, n[f"phi.mlp_w.{i}"]),
                               ad.matmul(ones, n[f"phi.mlp_b.{i}"])))
        return ad.matmul(ad.concat_cols(gmf, h), n["phi.combine"])
    affine = ad.add(ad.matmul(joint, n["phi.lin_w"]), ad.matmul(ones, n["phi.lin_b"]))
    return ad.add(ad.matmul(gmf, n["phi.combine"]), affine)


def bpr_node(pos: ad.Node, neg: ad.Node) -> ad.Node:
    """Batch mean of -log sigmoid(pos - neg), computed as softplus(neg - pos)."""
    return ad.scale(ad.scalar_sum(ad.softplus(ad.sub(neg, pos))), 1.0 / pos.shape[0])


def score(params: PredictorParams, users, items) -> np.ndarray:
    u = np.atleast_2d(np.asarray(users, dtype=np.float64))
    v = np.atleast_2d(np.asarray(items, dtype=np.float64))
    if u.shape[0] == 1 and v.shape[0] > 1:
        u = np.repeat(u, v.shape[0], axis=0)
    tape = PredictorTape(params, requires_grad=False)
    return score_node(tape, ad.constant(u), ad.constant(v)).value[:, 0]


def bpr_loss(pos, neg) -> tuple[float, np.ndarray, np.ndarray]:
    """(loss, d loss / d pos, d loss / d neg) for score vectors."""
    pos = np.asarray(pos, dtype=np.float64).reshape(-1, 1)
    neg = np.asarray(neg, dtype=np.float64).reshape(-1, 1)
    if len(pos) == 0:
        raise ValueError("bpr_loss needs at least one pair")
    p, q = ad.var(pos), ad.var(neg)
    root = bpr_node(p, q)
    ad.backward(root)
    return float(root.value[0, 0]), p.grad[:, 0], q.grad[:, 0]
