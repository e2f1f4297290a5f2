"""Dual-encoder driving policy with crossed segmentation decoders and a GRU waypoint head."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOGVAR_MIN, LOGVAR_MAX = -8.0, 4.0
# Fixed input scalings: speed ~ 0..12 m/s, goal ~ 20 m, waypoints ~ 0..12 m.
MEAS_SCALE = np.array([0.1, 1.0, 1.0, 1.0])
GOAL_SCALE = 0.05
WP_SCALE = 0.1


@dataclass(frozen=True)
class ModelConfig:
    img_embed_dim: int = 512
    lidar_embed_dim: int = 512
    shared_dim: int = 128
    meas_dim: int = 4
    hidden_dim: int = 64
    waypoint_count: int = 4
    cam_shape: tuple[int, int, int] = (3, 32, 96)
    lidar_shape: tuple[int, int, int] = (2, 64, 64)
    cam_hidden: int = 128
    lidar_hidden: int = 128
    seg_hidden: int = 32
    fuse_hidden: int = 128
    goal_dim: int = 2
    use_shared: bool = True

    @property
    def fused_dim(self) -> int:
        return self.img_embed_dim + self.lidar_embed_dim + self.shared_dim + self.meas_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cam_shape"] = list(self.cam_shape)
        d["lidar_shape"] = list(self.lidar_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["cam_shape"] = tuple(d["cam_shape"])
        d["lidar_shape"] = tuple(d["lidar_shape"])
        return cls(**d)


def _layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    cam_in = int(np.prod(cfg.cam_shape))
    lid_in = int(np.prod(cfg.lidar_shape))
    front_out = 4 * cfg.cam_shape[1] * cfg.cam_shape[2]
    td_out = 4 * cfg.lidar_shape[1] * cfg.lidar_shape[2]
    H, G = cfg.hidden_dim, 2 + cfg.goal_dim
    shapes: dict[str, tuple[int, ...]] = {}

    def lin(name, n_in, n_out):
        shapes[f"{name}.w"] = (n_in, n_out)
        shapes[f"{name}.b"] = (n_out,)

    lin("cam1", cam_in, cfg.cam_hidden)
    lin("cam2", cfg.cam_hidden, cfg.img_embed_dim)
    lin("lid1", lid_in, cfg.lidar_hidden)
    lin("lid2", cfg.lidar_hidden, cfg.lidar_embed_dim)
    lin("img_mu", cfg.img_embed_dim, cfg.shared_dim)
    lin("img_logvar", cfg.img_embed_dim, cfg.shared_dim)
    lin("lid_mu", cfg.lidar_embed_dim, cfg.shared_dim)
    lin("lid_logvar", cfg.lidar_embed_dim, cfg.shared_dim)
    lin("front1", cfg.lidar_embed_dim, cfg.seg_hidden)
    lin("front2", cfg.seg_hidden, front_out)
    lin("td1", cfg.img_embed_dim, cfg.seg_hidden)
    lin("td2", cfg.seg_hidden, td_out)
    lin("light", cfg.img_embed_dim, 4)
    lin("stop", cfg.img_embed_dim, 1)
    lin("fuse1", cfg.fused_dim, cfg.fuse_hidden)
    lin("fuse2", cfg.fuse_hidden, H)
    for gate in ("z", "r", "n"):
        lin(f"gru_{gate}x", G, H)
        shapes[f"gru_{gate}h.w"] = (H, H)
    lin("wp_head", H, 2)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _layer_shapes(cfg).items():
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            fan_in = shape[0]
            gain = 2.0 if not name.startswith(("wp_head", "gru", "img_", "lid_")) else 1.0
            data = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
            if name.startswith("wp_head"):
                data *= 0.1
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in _layer_shapes(cfg).values())


@dataclass
class ModelOutputs:
    waypoints: Tensor         # N x T x 2
    front_seg_logits: Tensor | None  # N x 4 x Hc x Wc
    td_seg_logits: Tensor | None     # N x 4 x HL x WL
    light_logits: Tensor      # N x 4
    stop_logit: Tensor        # N x 1
    gauss_img: tuple[Tensor, Tensor]
    gauss_lidar: tuple[Tensor, Tensor]
    shared_sample: Tensor     # N x shared_dim


class DrivingModel:
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        missing = set(_layer_shapes(cfg)) - set(self.params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def _lin(self, name: str, x: Tensor) -> Tensor:
        return ad.matmul(x, self.params[f"{name}.w"]) + self.params[f"{name}.b"]

    def encode(self, camera, lidar) -> tuple[Tensor, Tensor]:
        cam = ad.tensor(camera)
        lid = ad.tensor(lidar)
        n = cam.shape[0]
        img = ad.relu(self._lin("cam2", ad.relu(self._lin("cam1", cam.reshape(n, -1)))))
        lemb = ad.relu(self._lin("lid2", ad.relu(self._lin("lid1", lid.reshape(n, -1)))))
        return img, lemb

    def forward(self, camera, lidar, meas, goal, mode: str = "eval",
                rng: np.random.Generator | None = None, with_seg: bool = True) -> ModelOutputs:
        """Batched forward pass. ``camera`` may be a Tensor marked for input gradients."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        cfg = self.cfg
        cam = ad.tensor(camera)
        if tuple(cam.shape[1:]) != cfg.cam_shape:
            raise ad.ShapeError(f"camera shape {cam.shape[1:]} != {cfg.cam_shape}")
        lid = ad.tensor(lidar)
        if tuple(lid.shape[1:]) != cfg.lidar_shape:
            raise ad.ShapeError(f"lidar shape {lid.shape[1:]} != {cfg.lidar_shape}")
        n = cam.shape[0]
        img, lemb = self.encode(cam, lid)

        mu_i = self._lin("img_mu", img)
        lv_i = ad.clip(self._lin("img_logvar", img), LOGVAR_MIN, LOGVAR_MAX)
        mu_l = self._lin("lid_mu", lemb)
        lv_l = ad.clip(self._lin("lid_logvar", lemb), LOGVAR_MIN, LOGVAR_MAX)
        if not cfg.use_shared:
            shared = Tensor(np.zeros((n, cfg.shared_dim)))
        elif mode == "train":
            if rng is None:
                raise ValueError("train mode needs an rng for the reparameterised sample")
            z = rng.standard_normal((n, cfg.shared_dim))
            shared = mu_i + ad.exp(lv_i * 0.5) * z
        else:
            shared = mu_i

        front = td = None
        if with_seg:
            # Crossed flows: the lidar embedding reconstructs the camera view and vice versa.
            hc, wc = cfg.cam_shape[1:]
            hl, wl = cfg.lidar_shape[1:]
            front = self._lin("front2", ad.relu(self._lin("front1", lemb))).reshape(n, 4, hc, wc)
            td = self._lin("td2", ad.relu(self._lin("td1", img))).reshape(n, 4, hl, wl)
        light = self._lin("light", img)
        stop = self._lin("stop", img)

        m = ad.tensor(np.asarray(meas, dtype=np.float64) * MEAS_SCALE)
        fused = ad.concat([img, lemb, shared, m], axis=1)
        h0 = self._lin("fuse2", ad.relu(self._lin("fuse1", fused)))
        wps = self.decode_waypoints(h0, goal)
        return ModelOutputs(wps, front, td, light, stop, (mu_i, lv_i), (mu_l, lv_l), shared)

    __call__ = forward

    def decode_waypoints(self, fused64: Tensor, goal, rng=None) -> Tensor:
        """Autoregressive GRU; each step predicts a displacement added to the last waypoint."""
        n = fused64.shape[0]
        g = ad.tensor(np.asarray(goal, dtype=np.float64).reshape(n, 2) * GOAL_SCALE)
        h = fused64
        prev = Tensor(np.zeros((n, 2)))
        out = []
        P = self.params
        for _ in range(self.cfg.waypoint_count):
            x = ad.concat([prev * WP_SCALE, g], axis=1)
            z = ad.sigmoid(self._lin("gru_zx", x) + ad.matmul(h, P["gru_zh.w"]))
            r = ad.sigmoid(self._lin("gru_rx", x) + ad.matmul(h, P["gru_rh.w"]))
            cand = ad.tanh(self._lin("gru_nx", x) + r * ad.matmul(h, P["gru_nh.w"]))
            h = (1.0 - z) * cand + z * h
            prev = prev + self._lin("wp_head", h)
            out.append(ad.expand(prev, 1))
        return ad.concat(out, axis=1)

    def predict(self, camera, lidar, meas, goal) -> np.ndarray:
        """Eval-mode waypoints without building segmentation outputs."""
        out = self.forward(camera, lidar, meas, goal, mode="eval", with_seg=False)
        return out.waypoints.data

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        ad.save_checkpoint(path, self.params, {"model_config": self.cfg.to_dict(), **(meta or {})})

    @classmethod
    def load(cls, path: str | Path) -> "DrivingModel":
        arrays, meta = ad.load_checkpoint(path)
        cfg = ModelConfig.from_dict(meta["model_config"])
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
        return cls(cfg, params=params)
