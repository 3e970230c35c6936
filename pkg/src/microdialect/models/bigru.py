"""BiGRU classifiers: single task, flat multi-task, hierarchical-attention multi-task.

All four architectures share one skeleton: an embedding, a trunk of shared
BiGRU layers, and attention *sites*. A site reads the output sequence of one
trunk layer (optionally through its own task-owned BiGRU branch), pools it
with a learned-query attention, and feeds one dense softmax head per task.
Only the un-pooled sequence flows to the next trunk layer.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..nncore import ops
from ..nncore.layers import AttentionPool, BiGRU, Dense, Embedding
from ..nncore.module import Module

GEO_TASKS = ("city", "state", "country")
ARCHS = ("single", "mtl-common", "mtl-spec", "hamtl")
HAMTL_ORDERS = {
    "city_first": {2: "city", 3: "state", 4: "country"},
    "country_first": {2: "country", 3: "state", 4: "city"},
}


class InvalidConfig(ValueError):
    pass


@dataclass
class BiGRUConfig:
    vocab_size: int = 0
    embed_dim: int = 300
    layers: int = 3
    units: int = 1000  # total per layer, split across both directions
    max_seq_len: int = 50
    batch_size: int = 8
    dropout: float = 0.5
    lr: float = 1e-3
    epochs: int = 15
    patience: int = 5
    init_sigma: float = 0.05

    def validate(self) -> None:
        if self.vocab_size < 1:
            raise InvalidConfig("vocab_size must be positive")
        if self.units <= 0 or self.units % 2:
            raise InvalidConfig(f"units must be positive and even, got {self.units}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig(f"dropout must be in [0, 1), got {self.dropout}")
        if self.layers < 1 or self.embed_dim < 1 or self.max_seq_len < 1:
            raise InvalidConfig("layers, embed_dim and max_seq_len must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BiGRUConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class HaMtlConfig(BiGRUConfig):
    layers: int = 4
    dropout: float = 0.7
    order: str = "city_first"

    def validate(self) -> None:
        super().validate()
        if self.order not in HAMTL_ORDERS:
            raise InvalidConfig(f"order must be one of {sorted(HAMTL_ORDERS)}")
        if self.layers != 4:
            raise InvalidConfig("HA-MTL has exactly 4 BiGRU layers")


class Site(Module):
    def __init__(self, layer: int, n_in: int, units: int, rng, sigma: float, tasks: list[str],
                 own_layer: bool = False):
        self.layer = layer
        self.tasks = list(tasks)
        self.branch = BiGRU(n_in, units, rng, sigma) if own_layer else None
        self.attention = AttentionPool(units, rng, sigma)


@dataclass
class ForwardResult:
    logits: dict
    attention: dict = field(default_factory=dict)


class BiGRUNet(Module):
    def __init__(self, arch: str, config: BiGRUConfig, tasks: dict[str, list[str]],
                 rng: np.random.Generator, main_task: str | None = None):
        if arch not in ARCHS:
            raise InvalidConfig(f"unknown architecture {arch!r}")
        config.validate()
        if not tasks:
            raise InvalidConfig("at least one task is required")
        self.arch = arch
        self.config = config
        self.tasks = {t: list(labels) for t, labels in tasks.items()}
        self.main_task = main_task or next(iter(tasks))
        if self.main_task not in self.tasks:
            raise InvalidConfig(f"main task {self.main_task!r} has no head")
        c, s = config, config.init_sigma
        plan = _site_plan(arch, c, list(self.tasks))
        n_trunk = plan["trunk"]

        self.embed = Embedding(c.vocab_size, c.embed_dim, rng, s)
        self.trunk = []
        n_in = c.embed_dim
        for _ in range(n_trunk):
            self.trunk.append(BiGRU(n_in, c.units, rng, s))
            n_in = c.units
        self.sites = {}
        for name, layer, own, site_tasks in plan["sites"]:
            src_dim = c.embed_dim if layer == 0 else c.units
            self.sites[name] = Site(layer, src_dim, c.units, rng, s, site_tasks, own_layer=own)
        self.heads = {t: Dense(c.units, len(self.tasks[t]), rng, s) for t in self.tasks}

    @property
    def head_map(self) -> dict[int, list[str]]:
        """1-based trunk layer -> tasks supervised from it."""
        out: dict[int, list[str]] = {}
        for site in self.sites.values():
            out.setdefault(site.layer + (1 if site.branch is not None else 0), []).extend(site.tasks)
        return out

    def forward(self, ids, training: bool = False, rng: np.random.Generator | None = None
                ) -> ForwardResult:
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.shape[1] > self.config.max_seq_len:
            ids = ids[:, : self.config.max_seq_len]
        rate = self.config.dropout
        h = self.embed(ids)
        outputs = [h]
        for layer in self.trunk:
            h = ops.dropout(layer(h), rate, rng, training)
            outputs.append(h)
        logits, attention = {}, {}
        for name, site in self.sites.items():
            seq = outputs[site.layer]
            if site.branch is not None:
                seq = ops.dropout(site.branch(seq), rate, rng, training)
            context, weights = site.attention(seq)
            attention[name] = weights.data
            for task in site.tasks:
                logits[task] = self.heads[task](context)
        return ForwardResult(logits, attention)

    def spec(self) -> dict:
        return {"family": "bigru", "arch": self.arch, "config": self.config.to_dict(),
                "config_class": type(self.config).__name__, "tasks": self.tasks,
                "main_task": self.main_task}


def _site_plan(arch: str, c: BiGRUConfig, tasks: list[str]) -> dict:
    """Trunk depth and (name, trunk layer, own BiGRU?, tasks) per attention site."""
    geo = [t for t in GEO_TASKS if t in tasks]
    aux = [t for t in tasks if t not in GEO_TASKS]
    if arch == "single":
        if len(tasks) != 1:
            raise InvalidConfig("single-task network takes exactly one task")
        return {"trunk": c.layers, "sites": [("top", c.layers, False, tasks)]}
    if len(geo) != 3:
        raise InvalidConfig(f"{arch} needs city, state and country heads")
    if arch == "mtl-common":
        return {"trunk": c.layers, "sites": [("top", c.layers, False, tasks)]}
    if arch == "mtl-spec":
        if c.layers < 2:
            raise InvalidConfig("mtl-spec needs at least 2 layers")
        shared = c.layers - 1
        return {"trunk": shared,
                "sites": [(t, shared, True, [t]) for t in (*geo, *aux)]}
    # hamtl
    if c.layers != 4 or not isinstance(c, HaMtlConfig):
        raise InvalidConfig("hamtl needs an HaMtlConfig with 4 layers")
    order = HAMTL_ORDERS[c.order]
    sites = []
    for layer in (2, 3, 4):
        site_tasks = [order[layer]] + (aux if layer == 4 else [])
        sites.append((f"layer{layer}", layer, False, site_tasks))
    return {"trunk": 4, "sites": sites}


def build_single_task_bigru(config: BiGRUConfig, task: str, labels: list[str],
                            rng: np.random.Generator) -> BiGRUNet:
    return BiGRUNet("single", config, {task: labels}, rng)


def build_mtl_flat(config: BiGRUConfig, tasks: dict[str, list[str]], rng: np.random.Generator,
                   attention: str = "common") -> BiGRUNet:
    if attention not in ("common", "task_specific"):
        raise InvalidConfig(f"attention must be common or task_specific, got {attention!r}")
    return BiGRUNet("mtl-common" if attention == "common" else "mtl-spec", config, tasks, rng,
                    main_task="city" if "city" in tasks else None)


def build_ha_mtl(config: HaMtlConfig, tasks: dict[str, list[str]], rng: np.random.Generator
                 ) -> BiGRUNet:
    return BiGRUNet("hamtl", config, tasks, rng, main_task="city" if "city" in tasks else None)


def gru_params(n_in: int, hidden: int) -> int:
    return 3 * n_in * hidden + 3 * hidden * hidden + 3 * hidden


def expected_param_count(arch: str, c: BiGRUConfig, label_sizes: dict[str, int]) -> int:
    """Closed-form parameter count, independent of the module tree."""
    h = c.units // 2
    bigru = lambda n_in: 2 * gru_params(n_in, h)  # noqa: E731
    heads = sum(c.units * k + k for k in label_sizes.values())
    total = c.vocab_size * c.embed_dim + heads
    if arch in ("single", "mtl-common"):
        total += bigru(c.embed_dim) + (c.layers - 1) * bigru(c.units) + c.units
    elif arch == "mtl-spec":
        shared = c.layers - 1
        total += bigru(c.embed_dim) + (shared - 1) * bigru(c.units)
        total += len(label_sizes) * (bigru(c.units) + c.units)
    elif arch == "hamtl":
        total += bigru(c.embed_dim) + 3 * bigru(c.units) + 3 * c.units
    else:
        raise InvalidConfig(arch)
    return total
