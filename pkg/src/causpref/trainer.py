"""Joint training of the preference DAG and the scoring head.

Each batch minimizes ``bpr + zeta * dag_loss`` in one Adam step over both
parameter sets; the BPR gradient reaches the DAG through the inferred
preference whenever that preference replaces the user features.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dag import DagHyper, DagParams, DagTape, dag_loss_terms, fit, infer_preference, preference_node
from .data import EncodedDataset
from .errors import DataError, NumericalError
from .metrics import EvalConfig, evaluate
from .optim import Adam
from .predictor import PredictorParams, PredictorTape, bpr_node, score_node
from .sampler import ApsConfig, NegativePool, aps_batch, random_batch
from .splits import Split

MODEL_VERSION = "v1"


@dataclass
class TrainConfig:
    zeta: float = 1.0
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    use_preference_input: bool = True
    use_dag_regularizer: bool = True
    use_rs_constraints: bool = True
    use_aps: bool = True
    predictor: str = "neumf"
    embed: int = 16
    dag_hidden: int = 16
    dag_layers: int = 3
    aps_k: int = 20
    aps_distance: str = "euclidean"
    aps_delta: float = 1e-6
    eval_k: int = 10
    warmup_steps: int = 2000     # DAG-only steps before joint training
    preference_rounds: int | None = 1   # feedback rounds of preference inference; None = q_v

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.zeta < 0 or self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("zeta >= 0, lr > 0, batch_size, max_epochs and patience >= 1 required")

    def rounds(self, q_v: int) -> int:
        return q_v if self.preference_rounds is None else self.preference_rounds

    @property
    def uses_dag(self) -> bool:
        """Whether the DAG learner takes part at all."""
        return self.use_preference_input or self.use_aps or self.zeta > 0

    def aps(self) -> ApsConfig:
        return ApsConfig(k=self.aps_k, distance=self.aps_distance, delta=self.aps_delta, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise DataError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "causpref": {},
    "causpref-": {"use_rs_constraints": False},
    "causpref--": {"use_dag_regularizer": False, "use_rs_constraints": False},
    "neumf": {"use_preference_input": False, "use_dag_regularizer": False,
              "use_rs_constraints": False, "use_aps": False, "zeta": 0.0},
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(PRESETS)}")
    return TrainConfig(**{**overrides, **PRESETS[name]})


@dataclass
class Model:
    dag: DagParams | None
    phi: PredictorParams
    hyper: DagHyper
    config: TrainConfig
    schema_hash: str = ""

    def user_repr(self, user_features) -> np.ndarray:
        u = np.atleast_2d(np.asarray(user_features, dtype=np.float64))
        if self.config.use_preference_input:
            return infer_preference(self.dag, u, self.config.rounds(self.dag.q_v))
        return u

    def score_matrix(self, user_features, item_features, chunk: int = 32768) -> np.ndarray:
        """Scores of every (user row, item row) combination."""
        from .predictor import score

        reps = self.user_repr(user_features)
        v = np.asarray(item_features, dtype=np.float64)
        out = np.empty((len(reps), len(v)))
        per = max(1, chunk // max(len(v), 1))
        for s in range(0, len(reps), per):
            r = reps[s:s + per]
            uu = np.repeat(r, len(v), axis=0)
            vv = np.tile(v, (len(r), 1))
            out[s:s + per] = score(self.phi, uu, vv).reshape(len(r), len(v))
        return out

    def scorer(self, ds: EncodedDataset):
        check_compatible(self, ds)
        return lambda users, items: self.score_matrix(ds.user_features[users], ds.item_features[items])


def check_compatible(model: Model, ds: EncodedDataset) -> None:
    d_user = ds.q_v if model.config.use_preference_input else ds.q_u
    if model.phi.q_v != ds.q_v:
        raise DataError(f"model expects q_v = {model.phi.q_v} but the dataset has q_v = {ds.q_v}")
    if model.phi.d_user != d_user:
        raise DataError(f"model user input width {model.phi.d_user} but the dataset gives {d_user}")
    if model.dag is not None and (model.dag.q_u, model.dag.q_v) != (ds.q_u, ds.q_v):
        raise DataError(f"DAG learner widths ({model.dag.q_u}, {model.dag.q_v}) "
                        f"differ from dataset ({ds.q_u}, {ds.q_v})")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    bpr: float
    dag: float
    val_ndcg: float
    val_recall: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f.name for f in fields(EpochRecord)])
        for r in self.records:
            w.writerow([r.epoch, repr(r.loss), repr(r.bpr), repr(r.dag),
                        repr(r.val_ndcg), repr(r.val_recall), f"{r.seconds:.3f}"])
        return buf.getvalue()


# ---------------------------------------------------------------- objective

def batch_objective(dag: DagParams | None, phi: PredictorParams, hyper: DagHyper,
                    config: TrainConfig, users, items, neg_items):
    """Build the joint loss for one batch of feature rows.

    Returns ``(root, parts, leaves)`` where ``leaves`` maps parameter names to
    graph inputs.
    """
    users = np.asarray(users, dtype=np.float64)
    items = np.asarray(items, dtype=np.float64)
    ptape = PredictorTape(phi)
    leaves = dict(ptape.nodes)
    dtape = None
    if dag is not None and config.uses_dag:
        dtape = DagTape(dag)
        leaves.update(dtape.leaves())
    if config.use_preference_input:
        urepr = preference_node(dtape, ad.constant(users), config.rounds(dag.q_v))
    else:
        urepr = ad.constant(users)
    v_pos = ad.constant(items)
    pos = score_node(ptape, urepr, v_pos)
    neg = score_node(ptape, urepr, ad.constant(np.asarray(neg_items, dtype=np.float64)))
    bpr = bpr_node(pos, neg)
    parts = {"bpr": bpr}
    root = bpr
    if dtape is not None and config.zeta > 0:
        x = ad.constant(np.concatenate([users, items], axis=1))
        terms = dag_loss_terms(dtape, x, hyper, regularize=config.use_dag_regularizer,
                               rs_constraints=config.use_rs_constraints)
        dag_total = ad.sum_nodes(list(terms.values()))
        parts["dag"] = dag_total
        root = ad.add(bpr, ad.scale(dag_total, config.zeta))
    return root, parts, leaves


def _grads(leaves: dict[str, ad.Node], dag: DagParams | None) -> dict[str, np.ndarray]:
    g = {k: n.grad for k, n in leaves.items()}
    if dag is not None and "dag.w1" in g:
        g["dag.w1"] = np.where(dag.self_loop_mask(), 0.0, g["dag.w1"])
    return g


# ---------------------------------------------------------------- training

def init_model(ds: EncodedDataset, hyper: DagHyper, config: TrainConfig) -> Model:
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    dag = None
    if config.uses_dag:
        dag = DagParams.init(ds.q_u, ds.q_v, config.dag_hidden, config.dag_layers,
                             seed=np.random.default_rng(seeds[0]))
    d_user = ds.q_v if config.use_preference_input else ds.q_u
    phi = PredictorParams.init(config.predictor, d_user, ds.q_v, config.embed,
                               seed=np.random.default_rng(seeds[1]))
    return Model(dag, phi, hyper, config, ds.schema_hash())


def validate(model: Model, ds: EncodedDataset, idx, k: int) -> tuple[float, float]:
    inter = ds.interactions[idx]
    pool = np.unique(inter[:, 1])
    cfg = EvalConfig(ks=[min(k, len(pool))])
    res = evaluate(model.scorer(ds), inter, pool, cfg)
    kk = cfg.ks[0]
    return res.values[("ndcg", kk)], res.values[("recall", kk)]


def train(ds: EncodedDataset, split: Split, hyper: DagHyper | None = None,
          config: TrainConfig | None = None, model: Model | None = None,
          log=None) -> tuple[Model, TrainHistory]:
    hyper = hyper or DagHyper()
    config = config or TrainConfig()
    train_idx = np.asarray(split.train, dtype=np.int64)
    if len(train_idx) == 0:
        raise DataError("training split is empty")
    model = model or init_model(ds, hyper, config)
    dag, phi = model.dag, model.phi
    params = dict(phi.arrays())
    if dag is not None:
        params.update(dag.arrays())
    _, _, shuffle_seed, neg_seed, warm_seed = np.random.SeedSequence(config.seed).spawn(5)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    neg_rng = np.random.default_rng(neg_seed)

    inter = ds.interactions[train_idx]
    if dag is not None and config.warmup_steps > 0 and config.zeta > 0:
        fit(ds.rows(train_idx), ds.q_u, hyper, steps=config.warmup_steps, lr=config.lr,
            batch_size=config.batch_size, seed=np.random.default_rng(warm_seed), params=dag,
            rs_constraints=config.use_rs_constraints, regularize=config.use_dag_regularizer)
    opt = Adam(params, lr=config.lr, betas=config.betas, eps=config.eps)
    pool = NegativePool.from_interactions(np.unique(inter[:, 1]), inter)
    aps_cfg = config.aps()
    val_idx = np.asarray(split.val, dtype=np.int64)
    history = TrainHistory()
    best = (-math.inf, None)
    stale = 0
    last_finite = float("nan")

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(inter))
        sums = {"loss": 0.0, "bpr": 0.0, "dag": 0.0}
        n_batches = 0
        for b, s in enumerate(range(0, len(order), config.batch_size)):
            rows = inter[order[s:s + config.batch_size]]
            u_feat = ds.user_features[rows[:, 0]]
            v_feat = ds.item_features[rows[:, 1]]
            if config.use_aps:
                # on-policy: preferences from the current parameters
                pref = infer_preference(dag, u_feat, config.rounds(ds.q_v))
                neg = aps_batch(pref, rows[:, 0], rows[:, 1], pool, ds.item_features, aps_cfg, neg_rng)
            else:
                neg = random_batch(rows[:, 0], rows[:, 1], pool, neg_rng)
            root, parts, leaves = batch_objective(dag, phi, hyper, config, u_feat, v_feat,
                                                  ds.item_features[neg])
            loss = float(root.value[0, 0])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}; "
                                     f"last finite loss {last_finite}")
            last_finite = loss
            ad.backward(root)
            opt.step(params, _grads(leaves, dag))
            if dag is not None:
                dag.apply_mask()
            sums["loss"] += loss
            sums["bpr"] += float(parts["bpr"].value[0, 0])
            sums["dag"] += float(parts["dag"].value[0, 0]) if "dag" in parts else 0.0
            n_batches += 1
        if len(val_idx):
            v_ndcg, v_recall = validate(model, ds, val_idx, config.eval_k)
        else:
            v_ndcg, v_recall = float("nan"), float("nan")
        rec = EpochRecord(epoch, sums["loss"] / n_batches, sums["bpr"] / n_batches,
                          sums["dag"] / n_batches, v_ndcg, v_recall, time.perf_counter() - t0)
        history.records.append(rec)
        if log is not None:
            log(rec)
        score = v_ndcg if np.isfinite(v_ndcg) else -rec.loss
        if score > best[0]:
            best = (score, (None if dag is None else dag.copy(), phi.copy()))
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    best_dag, best_phi = best[1]
    return Model(best_dag, best_phi, hyper, config, model.schema_hash), history


# ---------------------------------------------------------------- persistence

def model_to_dict(model: Model) -> dict:
    return {"version": MODEL_VERSION, "schema_hash": model.schema_hash,
            "dag_hyper": model.hyper.to_dict(), "train_config": model.config.to_dict(),
            "theta": None if model.dag is None else model.dag.to_dict(),
            "phi": model.phi.to_dict()}


def model_from_dict(d: dict) -> Model:
    if d.get("version") != MODEL_VERSION:
        raise DataError(f"model file version {d.get('version')!r} != {MODEL_VERSION!r}")
    try:
        dag = None if d["theta"] is None else DagParams.from_dict(d["theta"])
        return Model(dag, PredictorParams.from_dict(d["phi"]), DagHyper(**d["dag_hyper"]),
                     TrainConfig.from_dict(d["train_config"]), d["schema_hash"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed model file: {e}") from None


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path, dataset: EncodedDataset | None = None) -> Model:
    """Load a model; with ``dataset`` given, reject schema or width mismatches."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt model file {path}: {e}") from None
    model = model_from_dict(d)
    if dataset is not None:
        check_compatible(model, dataset)
        if model.schema_hash != dataset.schema_hash():
            raise DataError("model was trained on a dataset with a different schema")
    return model
