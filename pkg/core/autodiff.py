"""
numpy 기반 역방향 자동미분

연산마다 Function 노드가 테이프(그래프)에 추가되고, backward() 가 역위상 순서로
기울기를 누적한 뒤 테이프를 비웁니다. 네트워크 입력에 대한 기울기도 얻을 수 있습니다.
"""
import threading
from contextlib import contextmanager
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from core.errors import ContractError, DimensionError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """현재 스레드에서 테이프 기록 중지"""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """n 차원 배열 + 기울기 + 테이프 노드"""

    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx: Optional["Function"] = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __neg__(self): return Neg.apply(self)
    def __add__(self, other): return Add.apply(self, other)
    def __radd__(self, other): return Add.apply(other, self)
    def __sub__(self, other): return Sub.apply(self, other)
    def __rsub__(self, other): return Sub.apply(other, self)
    def __mul__(self, other): return Mul.apply(self, other)
    def __rmul__(self, other): return Mul.apply(other, self)
    def __truediv__(self, other): return Div.apply(self, other)
    def __rtruediv__(self, other): return Div.apply(other, self)
    def __matmul__(self, other): return MatMul.apply(self, other)
    def __rmatmul__(self, other): return MatMul.apply(other, self)
    def __pow__(self, exponent: float): return Pow.apply(self, exponent=float(exponent))
    def __getitem__(self, index): return Index.apply(self, index=index)

    def sum(self, axis=None, keepdims: bool = False): return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape): return Reshape.apply(self, shape=shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return Transpose.apply(self, axes=axes or None)
    def exp(self): return Exp.apply(self)
    def expm1(self): return Expm1.apply(self)
    def log(self): return Log.apply(self)
    def sqrt(self): return Sqrt.apply(self)
    def sigmoid(self): return Sigmoid.apply(self)
    def silu(self): return SiLU.apply(self)
    def square(self): return self * self


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def parameter(data, dtype=np.float64, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True, name=name)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """브로드캐스트된 기울기를 원래 형상으로 합산"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """테이프 노드: forward 는 배열, backward 는 부모별 기울기 튜플"""

    def __init__(self, *parents: Tensor):
        self.parents = parents
        self.needs_grad: Tuple[bool, ...] = ()

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        dtype = next((x.dtype for x in inputs if isinstance(x, Tensor) and x.dtype.kind == "f"), None)
        tensors = tuple(as_tensor(x, dtype=dtype) for x in inputs)
        ctx = cls(*tensors)
        ctx.needs_grad = tuple(t.requires_grad for t in tensors)
        out = Tensor(ctx.forward(*(t.data for t in tensors), **kwargs))
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._ctx = ctx
        return out

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


def _check_broadcast(a: np.ndarray, b: np.ndarray):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError("브로드캐스트 불가한 형상", a.shape, b.shape)


class Add(Function):
    def forward(self, a, b):
        _check_broadcast(a, b)
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        _check_broadcast(a, b)
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        _check_broadcast(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        _check_broadcast(a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return (unbroadcast(grad / self.b, self.a.shape),
                unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape))


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    def forward(self, a, exponent: float):
        self.a, self.exponent = a, exponent
        return a ** exponent

    def backward(self, grad):
        return (grad * self.exponent * self.a ** (self.exponent - 1.0),)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError("행렬곱 형상 불일치", a.shape, b.shape)
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        ga = grad @ np.swapaxes(self.b, -1, -2)
        gb = np.swapaxes(self.a, -1, -2) @ grad
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, tuple(np.atleast_1d(self.axis)))
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise DimensionError("reshape 불가", a.shape, tuple(np.atleast_1d(shape)))

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Index(Function):
    def forward(self, a, index):
        self.shape, self.index, self.dtype = a.shape, index, a.dtype
        return a[index]

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=self.dtype)
        np.add.at(full, self.index, grad)
        return (full,)


class Concat(Function):
    def forward(self, *arrays, axis=1):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError:
            raise DimensionError("concat 형상 불일치", *(a.shape for a in arrays))

    def backward(self, grad):
        return tuple(np.split(grad, np.cumsum(self.sizes)[:-1], axis=self.axis))


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Expm1(Function):
    def forward(self, a):
        self.out = np.expm1(a)
        return self.out

    def backward(self, grad):
        return (grad * (self.out + 1.0),)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Sqrt(Function):
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        return (grad * 0.5 / self.out,)


class Sigmoid(Function):
    def forward(self, a):
        self.out = expit(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class SiLU(Function):
    def forward(self, a):
        self.a = a
        self.s = expit(a)
        return a * self.s

    def backward(self, grad):
        return (grad * (self.s + self.a * self.s * (1.0 - self.s)),)


class Conv2d(Function):
    """(N, C, H, W) * (O, C, k, k) → (N, O, H', W'), 정사각 커널, 대칭 패딩"""

    def forward(self, x, w, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
            raise DimensionError("conv2d 형상 불일치", x.shape, w.shape)
        k = w.shape[2]
        self.x_shape, self.w, self.stride, self.padding, self.k = x.shape, w, stride, padding, k
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        out_h = (xp.shape[2] - k) // stride + 1
        out_w = (xp.shape[3] - k) // stride + 1
        self.padded_shape = xp.shape
        self.windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
        out = np.tensordot(self.windows, w, axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad):
        s, k, p = self.stride, self.k, self.padding
        grad_w = None
        if self.needs_grad[1]:
            grad_w = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))
        out_h, out_w = grad.shape[2], grad.shape[3]
        gxp = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(grad, self.w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                gxp[:, :, i:i + s * out_h:s, j:j + s * out_w:s] += contrib
        h, w = self.x_shape[2], self.x_shape[3]
        return gxp[:, :, p:p + h, p:p + w], grad_w


class ConvTranspose2x2(Function):
    """스트라이드 2, 커널 2 전치 합성곱: (N, C, H, W) * (C, O, 2, 2) → (N, O, 2H, 2W)"""

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0] or w.shape[2:] != (2, 2):
            raise DimensionError("전치 합성곱 형상 불일치", x.shape, w.shape)
        self.x, self.w = x, w
        n, _, h, wd = x.shape
        out = np.zeros((n, w.shape[1], 2 * h, 2 * wd), dtype=np.result_type(x, w))
        for i in range(2):
            for j in range(2):
                out[:, :, i::2, j::2] = np.tensordot(x, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        return out

    def backward(self, grad):
        gx = np.zeros_like(self.x)
        gw = np.zeros_like(self.w)
        for i in range(2):
            for j in range(2):
                g = grad[:, :, i::2, j::2]
                gx += np.tensordot(g, self.w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                gw[:, :, i, j] = np.tensordot(self.x, g, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gw


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d.apply(x, w, stride=stride, padding=padding)


def conv_transpose2x2(x: Tensor, w: Tensor) -> Tensor:
    return ConvTranspose2x2.apply(x, w)


def _toposort(root: Tensor):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """
    스칼라 손실에서 역전파

    requires_grad 인 말단 텐서(파라미터, 입력)의 .grad 에 기울기를 누적하고 테이프를 비웁니다.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward 는 스칼라 손실에만 가능합니다: shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._ctx is None:
            node.grad = grad if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
    for node in order:
        node._ctx = None
