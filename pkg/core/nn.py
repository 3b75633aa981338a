"""
신경망 레이어, 네트워크 템플릿, 손실, Adam 옵티마이저

모든 레이어는 core.autodiff 의 Tensor 연산으로 구성되므로
파라미터와 입력 양쪽에 대해 기울기를 계산할 수 있습니다.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from core import autodiff as ad
from core.autodiff import Tensor
from core.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

EMBED_DIM = 32


class Module:
    """파라미터와 하위 모듈을 속성으로 가지는 레이어 기반 클래스"""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{index}.")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def __call__(self, *args, **kwargs) -> Tensor:
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs) -> Tensor:
        raise NotImplementedError


def _init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    return ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape), dtype=dtype)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = _init(rng, (in_features, out_features), in_features, dtype)
        self.bias = ad.parameter(np.zeros(out_features), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise DimensionError("dense 입력 형상 불일치", x.shape, self.weight.shape)
        return x @ self.weight + self.bias


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, dtype=np.float64):
        if kernel not in (1, 3) or stride not in (1, 2):
            raise ConfigError(f"지원하지 않는 합성곱 설정: kernel={kernel}, stride={stride}")
        self.stride = stride
        self.padding = kernel // 2
        self.weight = _init(rng, (out_channels, in_channels, kernel, kernel), in_channels * kernel * kernel, dtype)
        self.bias = ad.parameter(np.zeros((1, out_channels, 1, 1)), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, stride=self.stride, padding=self.padding) + self.bias


class ConvTranspose(Module):
    """2배 업샘플 전치 합성곱"""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = _init(rng, (in_channels, out_channels, 2, 2), in_channels, dtype)
        self.bias = ad.parameter(np.zeros((1, out_channels, 1, 1)), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv_transpose2x2(x, self.weight) + self.bias


def group_normalize(x: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """아핀 변환 전 그룹 정규화"""
    n, c, h, w = x.shape
    if c % groups:
        raise DimensionError(f"채널 수 {c} 가 그룹 {groups} 로 나누어지지 않습니다")
    grouped = x.reshape(n, groups, c // groups, h, w)
    mean = grouped.mean(axis=(2, 3, 4), keepdims=True)
    centered = grouped - mean
    var = (centered * centered).mean(axis=(2, 3, 4), keepdims=True)
    return (centered / (var + eps).sqrt()).reshape(n, c, h, w)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 4, eps: float = 1e-5, dtype=np.float64):
        self.groups = groups
        self.eps = eps
        self.gamma = ad.parameter(np.ones((1, channels, 1, 1)), dtype=dtype)
        self.beta = ad.parameter(np.zeros((1, channels, 1, 1)), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return group_normalize(x, self.groups, self.eps) * self.gamma + self.beta


def sinusoidal_embedding(values: np.ndarray, dim: int = EMBED_DIM, scale: float = 1.0,
                         dtype=np.float64) -> np.ndarray:
    """스칼라 조건(시간, 주파수)의 사인/코사인 임베딩 (N, dim)"""
    values = np.asarray(values, dtype=np.float64).reshape(-1, 1) * scale
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = values * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(dtype)


class ResBlock(Module):
    def __init__(self, in_channels: int, out_channels: int, emb_dim: int, groups: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.norm1 = GroupNorm(in_channels, groups, dtype=dtype)
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, dtype=dtype)
        self.emb = Dense(emb_dim, out_channels, rng, dtype=dtype)
        self.norm2 = GroupNorm(out_channels, groups, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, dtype=dtype)
        self.skip = Conv2d(in_channels, out_channels, 1, rng, dtype=dtype) if in_channels != out_channels else None

    def forward(self, x: Tensor, emb: Tensor) -> Tensor:
        h = self.conv1(self.norm1(x).silu())
        h = h + self.emb(emb).reshape(emb.shape[0], -1, 1, 1)
        h = self.conv2(self.norm2(h).silu())
        return h + (self.skip(x) if self.skip is not None else x)


class ConditionEmbedding(Module):
    """조건 스칼라 목록 → 사인 임베딩 → 2층 MLP"""

    def __init__(self, scales: Sequence[float], out_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.scales = tuple(scales)
        self.dtype = dtype
        self.fc1 = Dense(EMBED_DIM * len(self.scales), out_dim, rng, dtype=dtype)
        self.fc2 = Dense(out_dim, out_dim, rng, dtype=dtype)

    def forward(self, conditions: Sequence[np.ndarray]) -> Tensor:
        if len(conditions) != len(self.scales):
            raise DimensionError("조건 개수 불일치", (len(conditions),), (len(self.scales),))
        parts = [sinusoidal_embedding(c, scale=s, dtype=self.dtype) for c, s in zip(conditions, self.scales)]
        return self.fc2(self.fc1(Tensor(np.concatenate(parts, axis=1))).silu())


class UNet(Module):
    """
    2단 다운/업 UNet (기본 폭 16, 그룹 4)

    입력 (N, C_in, H, W), H 와 W 는 4의 배수. 조건 스칼라는 임베딩되어 각 ResBlock 에 더해집니다.
    """

    def __init__(self, in_channels: int, out_channels: int, cond_scales: Sequence[float],
                 rng: np.random.Generator, base: int = 16, groups: int = 4, dtype=np.float64):
        emb_dim = 4 * base
        c1, c2, c3 = base, 2 * base, 4 * base
        self.embed = ConditionEmbedding(cond_scales, emb_dim, rng, dtype)
        self.stem = Conv2d(in_channels, c1, 3, rng, dtype=dtype)
        self.enc1 = ResBlock(c1, c1, emb_dim, groups, rng, dtype)
        self.down1 = Conv2d(c1, c2, 3, rng, stride=2, dtype=dtype)
        self.enc2 = ResBlock(c2, c2, emb_dim, groups, rng, dtype)
        self.down2 = Conv2d(c2, c3, 3, rng, stride=2, dtype=dtype)
        self.mid = ResBlock(c3, c3, emb_dim, groups, rng, dtype)
        self.up1 = ConvTranspose(c3, c2, rng, dtype)
        self.dec1 = ResBlock(2 * c2, c2, emb_dim, groups, rng, dtype)
        self.up2 = ConvTranspose(c2, c1, rng, dtype)
        self.dec2 = ResBlock(2 * c1, c1, emb_dim, groups, rng, dtype)
        self.out_norm = GroupNorm(c1, groups, dtype=dtype)
        self.out = Conv2d(c1, out_channels, 3, rng, dtype=dtype)

    def forward(self, x: Tensor, conditions: Sequence[np.ndarray]) -> Tensor:
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise DimensionError("UNet 입력 높이/너비는 4의 배수여야 합니다", x.shape)
        emb = self.embed(conditions)
        h1 = self.enc1(self.stem(x), emb)
        h2 = self.enc2(self.down1(h1), emb)
        h = self.mid(self.down2(h2), emb)
        h = self.dec1(ad.concat([self.up1(h), h2], axis=1), emb)
        h = self.dec2(ad.concat([self.up2(h), h1], axis=1), emb)
        return self.out(self.out_norm(h).silu())


class MLPField(Module):
    """작은 격자용 전결합 격자 → 격자 네트워크"""

    def __init__(self, in_channels: int, out_channels: int, cond_scales: Sequence[float],
                 shape: Tuple[int, int], rng: np.random.Generator, hidden: int = 128, dtype=np.float64):
        self.shape = tuple(shape)
        self.out_channels = out_channels
        pixels = self.shape[0] * self.shape[1]
        self.embed = ConditionEmbedding(cond_scales, hidden, rng, dtype)
        self.fc1 = Dense(in_channels * pixels, hidden, rng, dtype)
        self.fc2 = Dense(hidden, hidden, rng, dtype)
        self.fc3 = Dense(hidden, out_channels * pixels, rng, dtype)

    def forward(self, x: Tensor, conditions: Sequence[np.ndarray]) -> Tensor:
        n = x.shape[0]
        h = (self.fc1(x.reshape(n, -1)) + self.embed(conditions)).silu()
        h = self.fc2(h).silu()
        return self.fc3(h).reshape(n, self.out_channels, *self.shape)


def build_network(descriptor: dict, rng: np.random.Generator, dtype=np.float64) -> Module:
    """
    아키텍처 기술자로 네트워크 생성

    Args:
        descriptor: {"arch": "unet"|"mlp", "in_channels", "out_channels", "cond_scales", "shape", ...}
    """
    arch = descriptor.get("arch")
    common = dict(in_channels=descriptor["in_channels"], out_channels=descriptor["out_channels"],
                  cond_scales=descriptor["cond_scales"], rng=rng, dtype=dtype)
    if arch == "unet":
        return UNet(base=descriptor.get("base", 16), groups=descriptor.get("groups", 4), **common)
    if arch == "mlp":
        return MLPField(shape=tuple(descriptor["shape"]), hidden=descriptor.get("hidden", 128), **common)
    raise ConfigError(f"알 수 없는 아키텍처: {arch}")


@dataclass
class NetworkParams:
    """이름 붙은 파라미터 + 아키텍처 기술자 + 학습 스텝 수"""

    descriptor: dict
    tensors: Dict[str, Tensor]
    step: int = 0

    @property
    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        missing = set(self.tensors) ^ set(arrays)
        if missing:
            raise DimensionError(f"파라미터 이름 불일치: {sorted(missing)[:5]}")
        for name, tensor in self.tensors.items():
            value = np.asarray(arrays[name])
            if value.shape != tensor.shape:
                raise DimensionError(f"파라미터 '{name}' 형상 불일치", value.shape, tensor.shape)
            tensor.data = value.astype(tensor.dtype)


def freeze(params: NetworkParams):
    """추론 전용: 파라미터 기울기 기록 중지"""
    for tensor in params.tensors.values():
        tensor.requires_grad = False
        tensor.grad = None


def mse(prediction: Tensor, target) -> Tensor:
    target = ad.as_tensor(target, dtype=prediction.dtype)
    if prediction.shape != target.shape:
        raise DimensionError("MSE 형상 불일치", prediction.shape, target.shape)
    diff = prediction - target
    return (diff * diff).mean()


@dataclass
class Adam:
    """편향 보정 Adam; 유한하지 않은 기울기가 있으면 해당 스텝을 건너뜀"""

    params: Dict[str, Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    skipped: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, grads: Optional[Dict[str, np.ndarray]] = None) -> bool:
        grads = grads if grads is not None else {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in self.params.items()}
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            logger.warning("유한하지 않은 기울기로 Adam 스텝 %d 건너뜀", self.t + 1)
            self.zero_grad()
            return False

        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, param in self.params.items():
            g = np.asarray(grads[name], dtype=param.dtype)
            m = self.m.get(name, np.zeros_like(param.data))
            v = self.v.get(name, np.zeros_like(param.data))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            param.data = (param.data - update).astype(param.dtype)
        self.zero_grad()
        return True

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None


def adam_step(optimizer: Adam, grads: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, Tensor]:
    optimizer.step(grads)
    return optimizer.params

