"""Binary scenario files and the dataset directory layout.

A dataset lives under ``<root>/scenarios/<split>/<id>.bin`` with a
tab-separated ``<root>/manifest.tsv`` index (split, id, scene_type, seed).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from ..geometry import Polygon, Polyline, Pose2D
from .types import AgentTrack, Behavior, Road, Scenario, SceneType

MAGIC = b"LDSC"
VERSION = 1
MANIFEST = "manifest.tsv"


class ScenarioFormatError(ValueError):
    pass


def _arr(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape) + a.tobytes()


def _str(s: str) -> bytes:
    raw = s.encode()
    return struct.pack("<H", len(raw)) + raw


def serialize(sc: Scenario) -> bytes:
    out = [MAGIC, struct.pack("<H", VERSION), _str(sc.id),
           struct.pack("<Bq", sc.scene_type.code, sc.seed),
           struct.pack("<4d", sc.initial_speed, sc.ego_length, sc.ego_width, sc.road.half_width),
           _arr(sc.road.centerline.points), _arr(sc.road.polygon.vertices), _arr(sc.expert),
           struct.pack("<I", len(sc.agents))]
    for a in sc.agents:
        out.append(struct.pack("<3d4dB", a.initial.x, a.initial.y, a.initial.yaw,
                               a.speed, a.length, a.width, a.route_s,
                               0 if a.behavior == Behavior.LOG_REPLAY else 1))
        has = a.poses is not None
        out.append(struct.pack("<B", int(has)))
        if has:
            out.append(_arr(a.poses))
            out.append(_arr(a.speeds if a.speeds is not None else np.zeros(len(a.poses))))
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ScenarioFormatError(f"truncated scenario at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode()

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}Q")
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)


def deserialize(buf: bytes) -> Scenario:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise ScenarioFormatError("bad magic number")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise ScenarioFormatError(f"unsupported scenario version {version}")
    sid = r.string()
    code, seed = r.unpack("<Bq")
    v0, elen, ewid, hw = r.unpack("<4d")
    centerline = Polyline(r.array())
    polygon = Polygon(r.array())
    expert = r.array()
    (n_agents,) = r.unpack("<I")
    agents = []
    for _ in range(n_agents):
        x, y, yaw, speed, length, width, route_s, beh = r.unpack("<3d4dB")
        (has,) = r.unpack("<B")
        poses = speeds = None
        if has:
            poses, speeds = r.array(), r.array()
        a = AgentTrack(Pose2D(x, y, 0.0), speed, length, width,
                       Behavior.LOG_REPLAY if beh == 0 else Behavior.IDM, poses, speeds, route_s)
        object.__setattr__(a.initial, "yaw", yaw)  # keep the stored value bit-exact
        agents.append(a)
    if r.pos != len(buf):
        raise ScenarioFormatError("trailing bytes after scenario payload")
    return Scenario(id=sid, road=Road(centerline, polygon, hw), expert=expert, agents=agents,
                    scene_type=SceneType.from_code(code), seed=seed, initial_speed=v0,
                    ego_length=elen, ego_width=ewid)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_bytes(serialize(sc))


def load_scenario(path) -> Scenario:
    return deserialize(Path(path).read_bytes())


def write_dataset(root, scenarios: Iterable[Scenario], split: str = "train") -> Path:
    root = Path(root)
    d = root / "scenarios" / split
    d.mkdir(parents=True, exist_ok=True)
    manifest = root / MANIFEST
    lines = []
    if manifest.exists():
        lines = [ln for ln in manifest.read_text().splitlines()[1:] if ln and ln.split("\t")[0] != split]
    for sc in scenarios:
        save_scenario(sc, d / f"{sc.id}.bin")
        lines.append(f"{split}\t{sc.id}\t{sc.scene_type.value}\t{sc.seed}")
    manifest.write_text("split\tid\tscene_type\tseed\n" + "".join(ln + "\n" for ln in lines))
    return manifest


def read_manifest(root) -> list[dict[str, str]]:
    path = Path(root) / MANIFEST
    rows = path.read_text().splitlines()
    header = rows[0].split("\t")
    return [dict(zip(header, ln.split("\t"))) for ln in rows[1:] if ln.strip()]


def load_split(root, split: str = "train") -> list[Scenario]:
    root = Path(root)
    return [load_scenario(root / "scenarios" / split / f"{row['id']}.bin")
            for row in read_manifest(root) if row["split"] == split]
