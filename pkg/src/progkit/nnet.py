"""Neural blocks for the prognosis networks, with hand-written backprop.

Everything runs on float64 numpy: a small 3x3x3 valid convolution encoder
(im2col + GEMM), batch normalization, a single-head GATv2 attention layer,
and a two-layer MLP. Each block exposes forward(...) -> (out, cache) and
backward(grad, cache) -> parameter gradients (plus input gradients where
needed), so the training loop can assemble exact gradients end to end.
Analytic gradients are verified against central finite differences in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.2


@dataclass
class TumorGraph:
    """One patient's tumours: patch per node plus shape descriptors.

    The graph is complete (every node attends to every node, itself
    included). patches: (n, pz, py, px); descriptors: (n, d).
    """

    patches: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self) -> None:
        self.patches = np.asarray(self.patches, dtype=np.float64)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        if self.patches.ndim != 4 or len(self.patches) < 1:
            raise ValueError(f"patches must be (n, pz, py, px) with n >= 1, got {self.patches.shape}")
        if self.descriptors.ndim != 2 or len(self.descriptors) != len(self.patches):
            raise ValueError(
                f"descriptors shape {self.descriptors.shape} does not match "
                f"{len(self.patches)} patches"
            )
        if not (np.all(np.isfinite(self.patches)) and np.all(np.isfinite(self.descriptors))):
            raise ValueError("graph inputs must be finite")

    @property
    def n_nodes(self) -> int:
        return len(self.patches)

    @property
    def adjacency(self) -> np.ndarray:
        return np.ones((self.n_nodes, self.n_nodes))


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[-1], shape[0] if len(shape) > 1 else shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class ConvEncoder:
    """3x3x3 valid conv (1 -> 16 channels), batch norm, ReLU, global average
    pool, then an affine projection to the embedding width."""

    def __init__(self, rng: np.random.Generator, channels: int = 16, embed: int = 64):
        self.channels = channels
        self.embed = embed
        self.params: dict[str, np.ndarray] = {
            "conv_w": _he(rng, (27, channels), fan_in=27),
            "conv_b": np.zeros(channels),
            "bn_gamma": np.ones(channels),
            "bn_beta": np.zeros(channels),
            "proj_w": _glorot(rng, (channels, embed)),
            "proj_b": np.zeros(embed),
        }
        self.buffers: dict[str, np.ndarray] = {
            "bn_mean": np.zeros(channels),
            "bn_var": np.ones(channels),
        }

    def forward(self, patches: np.ndarray, train: bool) -> tuple[np.ndarray, dict]:
        x = np.asarray(patches, dtype=np.float64)
        if x.ndim != 4:
            raise ValueError(f"patches must be (B, pz, py, px), got shape {x.shape}")
        if any(s < 3 for s in x.shape[1:]):
            raise ValueError(f"patch dimensions must be >= 3 for a valid 3^3 conv, got {x.shape[1:]}")
        b = x.shape[0]
        windows = np.lib.stride_tricks.sliding_window_view(x, (3, 3, 3), axis=(1, 2, 3))
        n = windows.shape[1] * windows.shape[2] * windows.shape[3]
        cols = windows.reshape(b * n, 27)

        z = cols @ self.params["conv_w"] + self.params["conv_b"]

        if train:
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            self.buffers["bn_mean"] = (1 - BN_MOMENTUM) * self.buffers["bn_mean"] + BN_MOMENTUM * mean
            self.buffers["bn_var"] = (1 - BN_MOMENTUM) * self.buffers["bn_var"] + BN_MOMENTUM * var
        else:
            mean = self.buffers["bn_mean"]
            var = self.buffers["bn_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mean) * inv_std
        bn = xhat * self.params["bn_gamma"] + self.params["bn_beta"]

        act = np.maximum(bn, 0.0)
        pooled = act.reshape(b, n, self.channels).mean(axis=1)
        emb = pooled @ self.params["proj_w"] + self.params["proj_b"]

        cache = {
            "cols": cols,
            "xhat": xhat,
            "inv_std": inv_std,
            "act_mask": bn > 0,
            "pooled": pooled,
            "b": b,
            "n": n,
            "train": train,
        }
        return emb, cache

    def backward(self, demb: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        b, n = cache["b"], cache["n"]
        grads: dict[str, np.ndarray] = {}
        grads["proj_w"] = cache["pooled"].T @ demb
        grads["proj_b"] = demb.sum(axis=0)
        dpooled = demb @ self.params["proj_w"].T

        dact = np.repeat(dpooled[:, None, :] / n, n, axis=1).reshape(b * n, self.channels)
        dbn = dact * cache["act_mask"]

        xhat = cache["xhat"]
        grads["bn_gamma"] = (dbn * xhat).sum(axis=0)
        grads["bn_beta"] = dbn.sum(axis=0)
        if cache["train"]:
            scale = self.params["bn_gamma"] * cache["inv_std"]
            dz = scale * (dbn - dbn.mean(axis=0) - xhat * (dbn * xhat).mean(axis=0))
        else:
            dz = dbn * (self.params["bn_gamma"] * cache["inv_std"])

        grads["conv_w"] = cache["cols"].T @ dz
        grads["conv_b"] = dz.sum(axis=0)
        return grads


class Gatv2Layer:
    """Single-head GATv2 attention over a complete graph.

    Score e_ij = a . leaky_relu(W_l h_i + W_r h_j); attention is the row
    softmax; output h'_i = relu(sum_j alpha_ij W_r h_j).
    """

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.d_in = d_in
        self.d_out = d_out
        self.params: dict[str, np.ndarray] = {
            "w_l": _glorot(rng, (d_out, d_in)),
            "w_r": _glorot(rng, (d_out, d_in)),
            "a": _glorot(rng, (d_out,)),
        }

    def forward(self, h: np.ndarray) -> tuple[np.ndarray, dict]:
        h = np.asarray(h, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.d_in:
            raise ValueError(f"node features must be (n, {self.d_in}), got {h.shape}")
        u = h @ self.params["w_l"].T  # (n, d_out)
        v = h @ self.params["w_r"].T
        m = u[:, None, :] + v[None, :, :]  # (n, n, d_out)
        leaky = np.where(m > 0, m, LEAKY_SLOPE * m)
        scores = leaky @ self.params["a"]  # (n, n)
        scores = scores - scores.max(axis=1, keepdims=True)
        expo = np.exp(scores)
        alpha = expo / expo.sum(axis=1, keepdims=True)
        pre = alpha @ v
        out = np.maximum(pre, 0.0)
        cache = {"h": h, "u": u, "v": v, "m": m, "leaky": leaky, "alpha": alpha, "pre": pre}
        return out, cache

    def backward(self, dout: np.ndarray, cache: dict) -> tuple[dict[str, np.ndarray], np.ndarray]:
        h, v, m, leaky, alpha, pre = (
            cache["h"],
            cache["v"],
            cache["m"],
            cache["leaky"],
            cache["alpha"],
            cache["pre"],
        )
        dpre = dout * (pre > 0)
        dalpha = dpre @ v.T  # (n, n)
        dv = alpha.T @ dpre
        # Row-softmax Jacobian.
        dscores = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        da = np.tensordot(dscores, leaky, axes=([0, 1], [0, 1]))
        dleaky = dscores[:, :, None] * self.params["a"][None, None, :]
        dm = dleaky * np.where(m > 0, 1.0, LEAKY_SLOPE)
        du = dm.sum(axis=1)
        dv = dv + dm.sum(axis=0)
        grads = {
            "w_l": du.T @ h,
            "w_r": dv.T @ h,
            "a": da,
        }
        dh = du @ self.params["w_l"] + dv @ self.params["w_r"]
        return grads, dh


class Mlp:
    """Two-layer perceptron with a ReLU hidden layer."""

    def __init__(self, rng: np.random.Generator, d_in: int, hidden: int, d_out: int):
        self.params: dict[str, np.ndarray] = {
            "w1": _glorot(rng, (d_in, hidden)),
            "b1": np.zeros(hidden),
            "w2": _glorot(rng, (hidden, d_out)),
            "b2": np.zeros(d_out),
        }

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        pre = x @ self.params["w1"] + self.params["b1"]
        hidden = np.maximum(pre, 0.0)
        out = hidden @ self.params["w2"] + self.params["b2"]
        return out, {"x": x, "pre": pre, "hidden": hidden}

    def backward(self, dout: np.ndarray, cache: dict) -> tuple[dict[str, np.ndarray], np.ndarray]:
        grads = {
            "w2": cache["hidden"].T @ dout,
            "b2": dout.sum(axis=0),
        }
        dhidden = dout @ self.params["w2"].T
        dpre = dhidden * (cache["pre"] > 0)
        grads["w1"] = cache["x"].T @ dpre
        grads["b1"] = dpre.sum(axis=0)
        dx = dpre @ self.params["w1"].T
        return grads, dx


class Adam:
    """Adam optimizer over a flat name -> array parameter dict."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / b1t
            vhat = self.v[name] / b2t
            params[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class MultiPatchModel:
    """Tumour-graph network: shared patch encoder, descriptor concat, two
    GATv2 layers, mean pool, EHR concat, MLP to the MTLR logits."""

    kind = "multi_patch"

    def __init__(
        self,
        seed: int,
        d_ehr: int,
        k_bins: int,
        d_desc: int = 7,
        embed: int = 64,
        hidden: int = 64,
        patch_shape: tuple[int, int, int] = (32, 32, 32),
    ):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.d_ehr = d_ehr
        self.k_bins = k_bins
        self.d_desc = d_desc
        self.embed = embed
        self.hidden = hidden
        self.patch_shape = tuple(patch_shape)
        self.encoder = ConvEncoder(rng, embed=embed)
        self.gat1 = Gatv2Layer(rng, embed + d_desc, embed)
        self.gat2 = Gatv2Layer(rng, embed, embed)
        self.mlp = Mlp(rng, embed + d_ehr, hidden, k_bins)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, block in (
            ("enc", self.encoder),
            ("gat1", self.gat1),
            ("gat2", self.gat2),
            ("mlp", self.mlp),
        ):
            for name, arr in block.params.items():
                out[f"{prefix}.{name}"] = arr
        return out

    def set_params(self, flat: dict[str, np.ndarray]) -> None:
        for prefix, block in (
            ("enc", self.encoder),
            ("gat1", self.gat1),
            ("gat2", self.gat2),
            ("mlp", self.mlp),
        ):
            for name in block.params:
                block.params[name] = np.array(flat[f"{prefix}.{name}"], dtype=np.float64)

    def _check_graphs(self, graphs: list[TumorGraph]) -> None:
        for g in graphs:
            if g.patches.shape[1:] != self.patch_shape:
                raise ValueError(
                    f"graph patches have shape {g.patches.shape[1:]}, model expects {self.patch_shape}"
                )
            if g.descriptors.shape[1] != self.d_desc:
                raise ValueError(
                    f"graph descriptors have width {g.descriptors.shape[1]}, "
                    f"model expects {self.d_desc}"
                )

    def forward(
        self, graphs: list[TumorGraph], ehr: np.ndarray, train: bool
    ) -> tuple[np.ndarray, dict]:
        if not graphs:
            raise ValueError("forward needs at least one graph")
        self._check_graphs(graphs)
        ehr = np.asarray(ehr, dtype=np.float64)
        if ehr.shape != (len(graphs), self.d_ehr):
            raise ValueError(f"ehr must be ({len(graphs)}, {self.d_ehr}), got {ehr.shape}")

        counts = [g.n_nodes for g in graphs]
        all_patches = np.concatenate([g.patches for g in graphs], axis=0)
        emb, enc_cache = self.encoder.forward(all_patches, train)

        pooled = np.empty((len(graphs), self.embed))
        graph_caches = []
        offset = 0
        for gi, g in enumerate(graphs):
            n = counts[gi]
            nodes = np.concatenate([emb[offset : offset + n], g.descriptors], axis=1)
            h1, c1 = self.gat1.forward(nodes)
            h2, c2 = self.gat2.forward(h1)
            pooled[gi] = h2.mean(axis=0)
            graph_caches.append({"c1": c1, "c2": c2, "n": n, "offset": offset})
            offset += n

        joint = np.concatenate([pooled, ehr], axis=1)
        logits, mlp_cache = self.mlp.forward(joint)
        cache = {
            "enc": enc_cache,
            "graphs": graph_caches,
            "mlp": mlp_cache,
            "total_nodes": offset,
        }
        return logits, cache

    def backward(self, dlogits: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        mlp_grads, djoint = self.mlp.backward(dlogits, cache["mlp"])
        for name, g in mlp_grads.items():
            grads[f"mlp.{name}"] = g
        dpooled = djoint[:, : self.embed]

        demb = np.zeros((cache["total_nodes"], self.embed))
        gat1_grads: dict[str, np.ndarray] | None = None
        gat2_grads: dict[str, np.ndarray] | None = None
        for gi, gc in enumerate(cache["graphs"]):
            n, offset = gc["n"], gc["offset"]
            dh2 = np.repeat(dpooled[gi][None, :] / n, n, axis=0)
            g2, dh1 = self.gat2.backward(dh2, gc["c2"])
            g1, dnodes = self.gat1.backward(dh1, gc["c1"])
            demb[offset : offset + n] = dnodes[:, : self.embed]
            if gat1_grads is None:
                gat1_grads, gat2_grads = g1, g2
            else:
                for name in g1:
                    gat1_grads[name] += g1[name]
                for name in g2:
                    gat2_grads[name] += g2[name]

        assert gat1_grads is not None and gat2_grads is not None
        for name, g in gat1_grads.items():
            grads[f"gat1.{name}"] = g
        for name, g in gat2_grads.items():
            grads[f"gat2.{name}"] = g
        enc_grads = self.encoder.backward(demb, cache["enc"])
        for name, g in enc_grads.items():
            grads[f"enc.{name}"] = g
        return grads


class DeepFusionModel:
    """Single-volume network: patch encoder, EHR concat, MLP to the logits."""

    kind = "deep_fusion"

    def __init__(
        self,
        seed: int,
        d_ehr: int,
        k_bins: int,
        embed: int = 64,
        hidden: int = 64,
        patch_shape: tuple[int, int, int] = (50, 80, 80),
    ):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.d_ehr = d_ehr
        self.k_bins = k_bins
        self.embed = embed
        self.hidden = hidden
        self.patch_shape = tuple(patch_shape)
        self.encoder = ConvEncoder(rng, embed=embed)
        self.mlp = Mlp(rng, embed + d_ehr, hidden, k_bins)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, block in (("enc", self.encoder), ("mlp", self.mlp)):
            for name, arr in block.params.items():
                out[f"{prefix}.{name}"] = arr
        return out

    def set_params(self, flat: dict[str, np.ndarray]) -> None:
        for prefix, block in (("enc", self.encoder), ("mlp", self.mlp)):
            for name in block.params:
                block.params[name] = np.array(flat[f"{prefix}.{name}"], dtype=np.float64)

    def forward(self, patches: np.ndarray, ehr: np.ndarray, train: bool) -> tuple[np.ndarray, dict]:
        patches = np.asarray(patches, dtype=np.float64)
        if patches.shape[1:] != self.patch_shape:
            raise ValueError(
                f"patches have shape {patches.shape[1:]}, model expects {self.patch_shape}"
            )
        ehr = np.asarray(ehr, dtype=np.float64)
        if ehr.shape != (len(patches), self.d_ehr):
            raise ValueError(f"ehr must be ({len(patches)}, {self.d_ehr}), got {ehr.shape}")
        emb, enc_cache = self.encoder.forward(patches, train)
        joint = np.concatenate([emb, ehr], axis=1)
        logits, mlp_cache = self.mlp.forward(joint)
        return logits, {"enc": enc_cache, "mlp": mlp_cache}

    def backward(self, dlogits: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        mlp_grads, djoint = self.mlp.backward(dlogits, cache["mlp"])
        for name, g in mlp_grads.items():
            grads[f"mlp.{name}"] = g
        demb = djoint[:, : self.embed]
        for name, g in self.encoder.backward(demb, cache["enc"]).items():
            grads[f"enc.{name}"] = g
        return grads
