"""
비딩 판의 유한요소 조화 해석

3절점 평면 셸 요소(CST 멤브레인 + Mindlin 굽힘, DSG3 전단)를 조립하고
(−Ω²M + (1+iη)K + K_spring) u = f 를 주파수마다 직접 분해로 풉니다.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import linalg as sparse_linalg

from core.errors import AssemblyError, ContractError, NonFiniteLevelError, SolverError
from core.model import BeadingPattern, FrequencyResponse, PlateConfig, levels_from_magnitudes

logger = logging.getLogger(__name__)

DOF_PER_NODE = 6
UX, UY, UZ, RX, RY, RZ = range(DOF_PER_NODE)
SHEAR_FACTOR = 5.0 / 6.0
SHEAR_STABILIZATION = 0.1
DRILLING_RATIO = 1e-4
DESK_RESOLUTION = (31, 46)


@dataclass(frozen=True)
class ShellMesh:
    """ny × nx 절점 격자, 절점 번호 = i·nx + j (i: y 방향, j: x 방향)"""

    ny: int
    nx: int
    coords: np.ndarray
    triangles: np.ndarray

    @property
    def node_count(self) -> int:
        return self.ny * self.nx

    @property
    def z(self) -> np.ndarray:
        return self.coords[:, 2]

    def node_index(self, i: int, j: int) -> int:
        return i * self.nx + j

    def boundary_nodes(self) -> np.ndarray:
        i, j = np.divmod(np.arange(self.node_count), self.nx)
        return np.flatnonzero((i == 0) | (i == self.ny - 1) | (j == 0) | (j == self.nx - 1))

    def nearest_node(self, x: float, y: float) -> int:
        d2 = (self.coords[:, 0] - x) ** 2 + (self.coords[:, 1] - y) ** 2
        return int(np.argmin(d2))


def build_mesh(cfg: PlateConfig, pattern: Optional[BeadingPattern] = None,
               resolution: Tuple[int, int] = DESK_RESOLUTION) -> ShellMesh:
    """
    패턴 높이를 쌍선형 보간해 절점을 z 방향으로 이동한 셸 메시 생성

    Args:
        cfg: 판 설정
        pattern: 비딩 패턴 (None 이면 평판)
        resolution: (ny, nx) 절점 수
    """
    ny, nx = resolution
    if ny < 8 or nx < 8:
        raise ContractError(f"메시 해상도가 너무 낮습니다: {resolution} (최소 8x8)")
    spacing = max(cfg.length / (nx - 1), cfg.width / (ny - 1))
    if spacing > 2.0 * cfg.l_min:
        logger.warning("절점 간격 %.4f m 가 최소 길이 %.4f m 를 해상하기에 거칩니다", spacing, cfg.l_min)

    x = np.linspace(0.0, cfg.length, nx)
    y = np.linspace(0.0, cfg.width, ny)
    xx, yy = np.meshgrid(x, y)
    if pattern is None:
        z = np.zeros_like(xx)
    else:
        rows, cols = pattern.shape
        pix_rows = yy / pattern.pixel_pitch_y - 0.5
        pix_cols = xx / pattern.pixel_pitch_x - 0.5
        z = ndimage.map_coordinates(pattern.grid, [pix_rows, pix_cols], order=1, mode="nearest")
        z = np.clip(z, 0.0, 1.0) * cfg.bead_height
    coords = np.column_stack([xx.ravel(), yy.ravel(), z.ravel()])

    i, j = np.meshgrid(np.arange(ny - 1), np.arange(nx - 1), indexing="ij")
    n00 = (i * nx + j).ravel()
    n01 = n00 + 1
    n10 = n00 + nx
    n11 = n10 + 1
    triangles = np.concatenate([np.column_stack([n00, n01, n11]), np.column_stack([n00, n11, n10])])
    return ShellMesh(ny=ny, nx=nx, coords=coords, triangles=triangles)


def write_mesh_obj(mesh: ShellMesh, path: Path) -> Path:
    """메시 디버그 덤프 (OBJ 텍스트)"""
    path = Path(path)
    lines = [f"# platebead shell mesh {mesh.ny}x{mesh.nx}"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.coords]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _element_frames(xyz: np.ndarray):
    v1 = xyz[:, 1] - xyz[:, 0]
    v2 = xyz[:, 2] - xyz[:, 0]
    normal = np.cross(v1, v2)
    twice_area = np.linalg.norm(normal, axis=1)
    if np.any(twice_area <= 0):
        raise AssemblyError("면적이 0 인 요소가 있습니다")
    e3 = normal / twice_area[:, None]
    e1 = v1 / np.linalg.norm(v1, axis=1)[:, None]
    e2 = np.cross(e3, e1)
    rotation = np.stack([e1, e2, e3], axis=1)
    rel = xyz - xyz[:, :1]
    local_x = np.einsum("enk,ek->en", rel, e1)
    local_y = np.einsum("enk,ek->en", rel, e2)
    return rotation, local_x, local_y, 0.5 * twice_area


def _element_matrices(xyz: np.ndarray, cfg: PlateConfig):
    """전역 좌표계 요소 강성 (m, 18, 18) 와 요소 면적"""
    rotation, lx, ly, area = _element_frames(xyz)
    m = xyz.shape[0]
    t = cfg.thickness
    E, nu = cfg.youngs_modulus, cfg.poisson_ratio

    b = np.stack([ly[:, 1] - ly[:, 2], ly[:, 2] - ly[:, 0], ly[:, 0] - ly[:, 1]], axis=1)
    c = np.stack([lx[:, 2] - lx[:, 1], lx[:, 0] - lx[:, 2], lx[:, 1] - lx[:, 0]], axis=1)
    dndx = b / (2.0 * area[:, None])
    dndy = c / (2.0 * area[:, None])

    size = 3 * DOF_PER_NODE
    bm = np.zeros((m, 3, size))
    bb = np.zeros((m, 3, size))
    for a in range(3):
        o = DOF_PER_NODE * a
        bm[:, 0, o + UX] = dndx[:, a]
        bm[:, 1, o + UY] = dndy[:, a]
        bm[:, 2, o + UX] = dndy[:, a]
        bm[:, 2, o + UY] = dndx[:, a]
        # βx = θy, βy = −θx
        bb[:, 0, o + RY] = dndx[:, a]
        bb[:, 1, o + RX] = -dndy[:, a]
        bb[:, 2, o + RY] = dndy[:, a]
        bb[:, 2, o + RX] = -dndx[:, a]

    # DSG3: 세 기준 절점에 대한 전단 변형률 평균
    bs = np.zeros((m, 2, size))
    for s in range(3):
        for i in range(3):
            if i == s:
                continue
            dx = lx[:, i] - lx[:, s]
            dy = ly[:, i] - ly[:, s]
            gap = np.zeros((m, size))
            gap[:, DOF_PER_NODE * i + UZ] += 1.0
            gap[:, DOF_PER_NODE * s + UZ] -= 1.0
            for node in (s, i):
                gap[:, DOF_PER_NODE * node + RY] += 0.5 * dx
                gap[:, DOF_PER_NODE * node + RX] -= 0.5 * dy
            bs[:, 0, :] += dndx[:, i, None] * gap
            bs[:, 1, :] += dndy[:, i, None] * gap
    bs /= 3.0

    iso = np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]]) / (1.0 - nu ** 2)
    dm = E * t * iso
    db = E * t ** 3 / 12.0 * iso
    shear_modulus = E / (2.0 * (1.0 + nu))
    edges = np.stack([np.hypot(lx[:, 1] - lx[:, 0], ly[:, 1] - ly[:, 0]),
                      np.hypot(lx[:, 2] - lx[:, 1], ly[:, 2] - ly[:, 1]),
                      np.hypot(lx[:, 0] - lx[:, 2], ly[:, 0] - ly[:, 2])], axis=1)
    h_e = edges.max(axis=1)
    ks = SHEAR_FACTOR * shear_modulus * t * t ** 2 / (t ** 2 + SHEAR_STABILIZATION * h_e ** 2)

    k_local = (np.einsum("eji,jk,ekl->eil", bm, dm, bm)
               + np.einsum("eji,jk,ekl->eil", bb, db, bb)
               + ks[:, None, None] * np.einsum("eji,ejl->eil", bs, bs)) * area[:, None, None]

    rot_dofs = [DOF_PER_NODE * a + r for a in range(3) for r in (RX, RY)]
    drilling = DRILLING_RATIO * np.max(k_local[:, rot_dofs, rot_dofs], axis=1)
    for a in range(3):
        d = DOF_PER_NODE * a + RZ
        k_local[:, d, d] += drilling

    transform = np.zeros((m, size, size))
    for block in range(2 * 3):
        sl = slice(3 * block, 3 * block + 3)
        transform[:, sl, sl] = rotation
    k_global = np.einsum("eji,ejk,ekl->eil", transform, k_local, transform)
    return k_global, area


def _element_dofs(triangles: np.ndarray) -> np.ndarray:
    return (DOF_PER_NODE * triangles[:, :, None] + np.arange(DOF_PER_NODE)).reshape(len(triangles), -1)


def assemble_global(mesh: ShellMesh, cfg: PlateConfig) -> Tuple[np.ndarray, sparse.csr_matrix, np.ndarray]:
    """
    구속 전 전역 행렬

    Returns:
        (집중 질량 대각, 탄성 강성 CSR, 경계 회전 스프링 대각)
    """
    n = DOF_PER_NODE * mesh.node_count
    k_elem, area = _element_matrices(mesh.coords[mesh.triangles], cfg)
    dofs = _element_dofs(mesh.triangles)
    rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
    k_elastic = sparse.coo_matrix((k_elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    rho, t = cfg.density, cfg.thickness
    node_mass = np.zeros(mesh.node_count)
    np.add.at(node_mass, mesh.triangles.ravel(), np.repeat(area / 3.0, 3))
    mass = np.zeros((mesh.node_count, DOF_PER_NODE))
    mass[:, :3] = (rho * t * node_mass)[:, None]
    mass[:, 3:] = (rho * t ** 3 / 12.0 * node_mass)[:, None]

    springs = np.zeros((mesh.node_count, DOF_PER_NODE))
    if cfg.rot_stiffness > 0:
        i, j = np.divmod(np.arange(mesh.node_count), mesh.nx)
        springs[(i == 0) | (i == mesh.ny - 1), RX] += cfg.rot_stiffness
        springs[(j == 0) | (j == mesh.nx - 1), RY] += cfg.rot_stiffness
    return mass.ravel(), k_elastic, springs.ravel()


def constrained_dofs(mesh: ShellMesh) -> np.ndarray:
    """경계 z 변위 + 평면 내 강체 운동 최소 구속"""
    fixed = [DOF_PER_NODE * node + UZ for node in mesh.boundary_nodes()]
    first, last = mesh.node_index(0, 0), mesh.node_index(0, mesh.nx - 1)
    fixed += [DOF_PER_NODE * first + UX, DOF_PER_NODE * first + UY, DOF_PER_NODE * last + UY]
    return np.unique(fixed)


def point_load(mesh: ShellMesh, node: int) -> np.ndarray:
    """절점 z 방향 단위 하중 벡터 (전역 자유도)"""
    force = np.zeros(DOF_PER_NODE * mesh.node_count)
    force[DOF_PER_NODE * node + UZ] = 1.0
    return force


@dataclass
class SystemMatrices:
    """구속이 반영된 시스템 행렬 (자유 자유도 기준)"""

    mesh: ShellMesh
    mass: sparse.csc_matrix
    k_elastic: sparse.csc_matrix
    k_spring: sparse.csc_matrix
    loss_factor: float
    force: np.ndarray
    free: np.ndarray
    load_node: int

    @property
    def size(self) -> int:
        return self.free.size

    @property
    def stiffness(self) -> sparse.csc_matrix:
        """복소 강성 K = (1+iη)K_elastic + K_spring"""
        return ((1.0 + 1j * self.loss_factor) * self.k_elastic + self.k_spring).tocsc()

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        full = np.zeros(DOF_PER_NODE * self.mesh.node_count, dtype=reduced.dtype)
        full[self.free] = reduced
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free]


def assemble(mesh: ShellMesh, cfg: PlateConfig) -> SystemMatrices:
    """
    구속, 회전 스프링, 하중을 포함한 시스템 조립

    Args:
        mesh: 셸 메시
        cfg: 판 설정 (손실계수, 회전 강성, 하중 위치)
    """
    mass, k_elastic, springs = assemble_global(mesh, cfg)
    n = mass.size
    free = np.setdiff1d(np.arange(n), constrained_dofs(mesh))

    k_ff = k_elastic[free][:, free].tocsc()
    diag = k_ff.diagonal() + springs[free]
    if np.any(diag <= 0) or np.any(mass[free] <= 0):
        raise AssemblyError("구속 후 시스템이 특이합니다 (강성 또는 질량이 0 인 자유도)")

    load_node = mesh.nearest_node(cfg.load_x, cfg.load_y)
    return SystemMatrices(
        mesh=mesh,
        mass=sparse.diags(mass[free]).tocsc(),
        k_elastic=k_ff,
        k_spring=sparse.diags(springs[free]).tocsc(),
        loss_factor=cfg.loss_factor,
        force=point_load(mesh, load_node)[free],
        free=free,
        load_node=load_node,
    )


def _solve_reduced(system: SystemMatrices, frequency: float, force: np.ndarray) -> np.ndarray:
    omega = 2.0 * math.pi * frequency
    dynamic = (system.stiffness - omega ** 2 * system.mass).tocsc()
    try:
        solution = sparse_linalg.splu(dynamic).solve(force.astype(np.complex128))
    except RuntimeError as e:
        raise SolverError(f"{frequency} Hz 분해 실패: {e}")
    if not np.all(np.isfinite(solution)):
        raise SolverError(f"{frequency} Hz 해가 유한하지 않습니다")
    return solution


def solve_full(system: SystemMatrices, frequency: float, force: Optional[np.ndarray] = None) -> np.ndarray:
    """전체 자유도 복소 변위 (절점 × 6)"""
    if frequency <= 0:
        raise ContractError(f"주파수는 양수여야 합니다: {frequency}")
    reduced_force = system.force if force is None else force
    if reduced_force.size != system.size:
        reduced_force = system.restrict(reduced_force)
    return system.expand(_solve_reduced(system, frequency, reduced_force)).reshape(-1, DOF_PER_NODE)


def solve_harmonic(system: SystemMatrices, frequency: float, force: Optional[np.ndarray] = None) -> np.ndarray:
    """
    임의 하중에 대한 절점 법선(z) 복소 변위

    Args:
        system: 조립된 시스템
        frequency: 주파수 [Hz]
        force: 전역 또는 자유 자유도 하중 벡터 (기본: 점 하중)
    """
    return solve_full(system, frequency, force)[:, UZ]


@dataclass
class SweepResult:
    """주파수 스윕 결과; 실패한 주파수는 errors 에 기록되고 frf 에서 빠집니다"""

    frf: FrequencyResponse
    fields: np.ndarray
    errors: Dict[float, str] = field(default_factory=dict)

    def __iter__(self):
        return iter((self.frf, self.fields))


def solve_frf(system: SystemMatrices, frequencies: Iterable[float], workers: int = 1) -> SweepResult:
    """
    주파수 응답 스윕

    Args:
        system: 조립된 시스템
        frequencies: 증가하는 양의 주파수 [Hz]
        workers: 동시 분해 스레드 수

    Returns:
        SweepResult (레벨, 주파수 × 절점 속도 크기, 주파수별 오류)
    """
    freqs = np.asarray(list(frequencies), dtype=np.float64)
    if freqs.size == 0 or np.any(freqs <= 0):
        raise ContractError("주파수는 비어있지 않은 양수 배열이어야 합니다")

    def one(freq: float) -> np.ndarray:
        return 2.0 * math.pi * freq * np.abs(solve_harmonic(system, freq))

    results: Dict[float, np.ndarray] = {}
    errors: Dict[float, str] = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {float(f): pool.submit(one, float(f)) for f in freqs}
        for freq, future in futures.items():
            try:
                results[freq] = future.result()
            except SolverError as e:
                logger.error("주파수 %.3f Hz 풀이 실패: %s", freq, e)
                errors[freq] = str(e)

    good = [f for f in freqs if float(f) in results]
    fields = np.array([results[float(f)] for f in good]).reshape(len(good), system.mesh.node_count)
    levels = []
    kept = []
    for f, row in zip(good, fields):
        try:
            levels.append(float(levels_from_magnitudes(row[None, :])[0]))
            kept.append(f)
        except NonFiniteLevelError as e:
            errors[float(f)] = str(e)
    mask = np.isin(good, kept)
    return SweepResult(FrequencyResponse(np.array(kept), np.array(levels)), fields[mask], errors)


def natural_frequencies(system: SystemMatrices, count: int = 6) -> np.ndarray:
    """비감쇠 고유진동수 [Hz] (shift-invert 희소 고유값 풀이)"""
    stiffness = (system.k_elastic + system.k_spring).tocsc()
    eigenvalues = sparse_linalg.eigsh(stiffness, k=count, M=system.mass, sigma=0.0,
                                      which="LM", return_eigenvectors=False)
    return np.sort(np.sqrt(np.maximum(eigenvalues, 0.0)) / (2.0 * math.pi))


def rotation_field(cfg: PlateConfig, f1: float, f2: float, df: float = 1.0,
                   resolution: Tuple[int, int] = DESK_RESOLUTION, workers: int = 1) -> np.ndarray:
    """
    평판 회전 속도 기준 필드

    [f1, f2] 스윕에서 절점별 (Ω|θx|)² + (Ω|θy|)² 를 리만 합으로 적분합니다.

    Returns:
        (ny, nx) 음이 아닌 필드
    """
    mesh = build_mesh(cfg, None, resolution)
    system = assemble(mesh, cfg)
    freqs = np.arange(f1, f2 + 0.5 * df, df)
    if freqs.size == 0 or freqs[0] <= 0:
        raise ContractError(f"회전 기준 주파수 구간 오류: [{f1}, {f2}]")

    def one(freq: float) -> np.ndarray:
        rotations = solve_full(system, freq)[:, [RX, RY]]
        return np.sum((2.0 * math.pi * freq * np.abs(rotations)) ** 2, axis=1)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(pool.map(one, freqs))
    return (np.sum(parts, axis=0) * df).reshape(mesh.ny, mesh.nx)


def kirchhoff_frequency(cfg: PlateConfig, m: int, n: int) -> float:
    """단순 지지 Kirchhoff 판의 해석 고유진동수 [Hz]"""
    rho_h = cfg.density * cfg.thickness
    return 0.5 * math.pi * math.sqrt(cfg.bending_stiffness / rho_h) * (
        (m / cfg.length) ** 2 + (n / cfg.width) ** 2)

