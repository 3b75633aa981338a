"""
신경망 체크포인트 (NNCK) 입출력

형식: "NNCK" | u32 버전 | u32 길이 + UTF-8 JSON 기술자 | u64 스텝 | u32 파라미터 수 |
      파라미터마다 (u32 이름 길이, 이름, u32 차원 수, u32 차원들, little-endian float32 데이터)
"""
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np

from core.errors import PatternFormatError
from core.nn import NetworkParams

MAGIC = b"NNCK"
VERSION = 1


@dataclass
class Checkpoint:
    descriptor: dict
    arrays: Dict[str, np.ndarray]
    step: int


def save_checkpoint(path: Path, params: NetworkParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    descriptor = json.dumps(params.descriptor, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(descriptor)), descriptor,
              struct.pack("<Q", params.step), struct.pack("<I", len(params.tensors))]
    for name, tensor in params.tensors.items():
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(tensor.data, dtype="<f4")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack("<I", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    path.write_bytes(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, blob: bytes, source: Path):
        self.blob, self.pos, self.source = blob, 0, source

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.blob):
            raise PatternFormatError(f"체크포인트가 잘렸습니다: {self.source}")
        chunk = self.blob[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise PatternFormatError(f"NNCK 체크포인트가 아닙니다: {path}")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise PatternFormatError(f"지원하지 않는 체크포인트 버전 {version}: {path}")
    (length,) = reader.unpack("<I")
    try:
        descriptor = json.loads(reader.take(length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PatternFormatError(f"체크포인트 기술자 파싱 실패: {e}")
    (step,) = reader.unpack("<Q")
    (count,) = reader.unpack("<I")

    arrays = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).copy()
    if reader.pos != len(reader.blob):
        raise PatternFormatError(f"체크포인트 끝에 알 수 없는 데이터가 있습니다: {path}")
    return Checkpoint(descriptor=descriptor, arrays=arrays, step=step)
