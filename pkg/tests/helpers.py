"""Tiny model builders shared by the unit and acceptance tests."""
import numpy as np

from microdialect.models import (BiGRUConfig, BiGRUNet, EncoderConfig, HaMtlConfig,
                                 build_tiny_encoder)
from microdialect.nncore import ops

V, E, H, T = 30, 8, 16, 5
GEO = {"city": ["c0", "c1", "c2", "c3"], "state": ["s0", "s1"], "country": ["k0", "k1"]}
ARCH_NAMES = ("single", "mtl-common", "mtl-spec", "hamtl-city", "hamtl-country", "encoder")


def tiny_bigru_config(cls=BiGRUConfig, **kw):
    base = dict(vocab_size=V, embed_dim=E, units=H, layers=2, max_seq_len=T, dropout=0.0,
                init_sigma=0.5)
    if cls is HaMtlConfig:
        base["layers"] = 4
    base.update(kw)
    return cls(**base)


def tiny_model(name, seed=0, tasks=None):
    rng = np.random.default_rng(seed)
    if name == "single":
        return BiGRUNet("single", tiny_bigru_config(), tasks or {"city": GEO["city"]}, rng)
    if name in ("mtl-common", "mtl-spec"):
        return BiGRUNet(name, tiny_bigru_config(), tasks or GEO, rng, main_task="city")
    if name.startswith("hamtl"):
        order = "city_first" if name == "hamtl-city" else "country_first"
        return BiGRUNet("hamtl", tiny_bigru_config(HaMtlConfig, order=order), tasks or GEO, rng,
                        main_task="city")
    if name == "encoder":
        cfg = EncoderConfig(vocab_size=V, layers=1, heads=2, model_dim=E, max_seq_len=T,
                            finetune_max_seq_len=T, dropout=0.0, init_sigma=0.5)
        return build_tiny_encoder(cfg, rng, tasks or {"city": GEO["city"]})
    raise ValueError(name)


def tiny_batch(model, batch=3, seed=1):
    rng = np.random.default_rng(seed)
    ids = rng.integers(3, V, size=(batch, T))
    labels = {t: rng.integers(0, len(lab), size=batch) for t, lab in model.tasks.items()}
    return ids, labels


def supervised_loss(model, ids, labels):
    out = model.forward(ids)
    loss = None
    for t in sorted(labels):
        term = ops.cross_entropy(out.logits[t], labels[t])
        loss = term if loss is None else loss + term
    return loss
