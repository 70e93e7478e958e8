"""
On-disk formats.

JSON documents and JSON Lines rows are written as canonical JSON (sorted keys,
compact separators) so identical inputs always give byte-identical files.
Every document and row carries ``schema_version``. Readers report the file
and line of the first malformed row through ``ParseError``.
"""

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from omnifuse.errors import ParseError, ValidationError
from omnifuse.skeleton import N_JOINTS, OcclusionScenario

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ROOT_OFFSET_TOLERANCE = 1e-6

GRID_HEADER = ("radar_id", "true_x", "true_z", "raw_x", "raw_z", "t")
IMAGE_SAMPLE_HEADER = ("radar_id", "x", "z", "mean_x")
HEATMAP_HEADER = ("cell_x", "cell_z", "mae_x_m", "mae_z_m", "n")

PathLike = Union[str, Path]


def canonical_json(obj: Any) -> str:
    """
    Serialize object into canonical JSON format.
    Ensures stable hashing across runs.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def compute_sha256(file_path: PathLike) -> str:
    sha256 = hashlib.sha256()
    with Path(file_path).open("rb") as f:
        while chunk := f.read(8192):
            sha256.update(chunk)
    return sha256.hexdigest()


def write_json(path: PathLike, obj: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"schema_version": SCHEMA_VERSION, **obj}
    path.write_text(canonical_json(document) + "\n", encoding="utf-8")
    return path


def _check_version(data: Any, path: PathLike, line: Optional[int]) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ParseError(path, line, "expected a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(path, line, f"unsupported schema_version {version!r}")
    return data


def read_json(path: PathLike) -> Dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(path, None, "file is not valid UTF-8") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from exc
    return _check_version(data, path, None)


def write_jsonl(path: PathLike, rows: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(canonical_json({"schema_version": SCHEMA_VERSION, **row}) + "\n")
    return path


def _decoded_lines(f, path: PathLike) -> Iterator[str]:
    """Lines of a binary file, decoded as UTF-8 one line at a time."""
    for line_no, raw in enumerate(f, start=1):
        try:
            yield raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(path, line_no, "line is not valid UTF-8") from exc


def read_jsonl(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line_number, row) for every non-blank line."""
    with Path(path).open("rb") as f:
        for line_no, line in enumerate(_decoded_lines(f, path), start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            yield line_no, _check_version(data, path, line_no)


def _require(row: Dict[str, Any], key: str, path: PathLike, line: int) -> Any:
    if key not in row:
        raise ParseError(path, line, f"missing field {key!r}")
    return row[key]


def _float_array(value: Any, shape: Tuple[int, ...], what: str, path: PathLike, line: int):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(path, line, f"{what} must be numeric") from exc
    if arr.shape != shape:
        raise ParseError(path, line, f"{what} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(path, line, f"{what} must be finite")
    return arr


def _float(value: Any, what: str, path: PathLike, line: int) -> float:
    return float(_float_array(value, (), what, path, line))


def _int(row: Dict[str, Any], key: str, path: PathLike, line: int) -> int:
    value = _require(row, key, path, line)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(path, line, f"{key} must be an integer, got {value!r}")
    return value


def _objects(row: Dict[str, Any], key: str, path: PathLike, line: int) -> List[Dict[str, Any]]:
    value = _require(row, key, path, line)
    if not isinstance(value, list) or not all(isinstance(v, dict) for v in value):
        raise ParseError(path, line, f"{key} must be a list of objects")
    return value


def _scenario(row: Dict[str, Any], path: PathLike, line: int) -> str:
    value = row.get("scenario", "none")
    if not isinstance(value, str) or value not in {s.value for s in OcclusionScenario}:
        raise ParseError(path, line, f"unknown occlusion scenario {value!r}")
    return value


def _detections(value: Any, path: PathLike, line: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float).reshape(-1, 2)
    except (TypeError, ValueError) as exc:
        raise ParseError(path, line, "detections must be numeric (x, z) pairs") from exc
    if not np.all(np.isfinite(arr)):
        raise ParseError(path, line, "detections must be finite")
    return arr


# CSV tables


def _read_csv(path: PathLike, header: Sequence[str]) -> Iterator[Tuple[int, List[str]]]:
    with Path(path).open("rb") as f:
        reader = csv.reader(_decoded_lines(f, path))
        first = next(reader, None)
        if first is None or tuple(h.strip() for h in first) != tuple(header):
            raise ParseError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    path, reader.line_num, f"expected {len(header)} columns, got {len(row)}"
                )
            yield reader.line_num, row


def _parse_number(cell: str, kind, path: PathLike, line: int, column: str):
    try:
        return kind(cell)
    except ValueError as exc:
        raise ParseError(path, line, f"column {column!r}: cannot parse {cell!r}") from exc


@dataclass(frozen=True)
class GridRow:
    radar_id: int
    true_x: float
    true_z: float
    raw_x: float
    raw_z: float
    t: float


def write_grid_csv(path: PathLike, rows: Iterable[GridRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(GRID_HEADER)
        for r in rows:
            writer.writerow([r.radar_id, repr(r.true_x), repr(r.true_z), repr(r.raw_x),
                             repr(r.raw_z), repr(r.t)])
    return path


def read_grid_csv(path: PathLike) -> List[GridRow]:
    rows = []
    for line, cells in _read_csv(path, GRID_HEADER):
        values = [
            _parse_number(cell, int if name == "radar_id" else float, path, line, name)
            for name, cell in zip(GRID_HEADER, cells)
        ]
        rows.append(GridRow(*values))
    return rows


@dataclass(frozen=True)
class ImageSample:
    """A radar position (raw unless a calibration was applied) paired with the camera mean x."""

    radar_id: int
    x: float
    z: float
    mean_x: float


def write_image_samples_csv(path: PathLike, samples: Iterable[ImageSample]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(IMAGE_SAMPLE_HEADER)
        for s in samples:
            writer.writerow([s.radar_id, repr(s.x), repr(s.z), repr(s.mean_x)])
    return path


def read_image_samples_csv(path: PathLike) -> List[ImageSample]:
    samples = []
    for line, cells in _read_csv(path, IMAGE_SAMPLE_HEADER):
        radar_id = _parse_number(cells[0], int, path, line, "radar_id")
        x, z, mean_x = (
            _parse_number(cell, float, path, line, name)
            for name, cell in zip(IMAGE_SAMPLE_HEADER[1:], cells[1:])
        )
        samples.append(ImageSample(radar_id, x, z, mean_x))
    return samples


def write_heatmap_csv(path: PathLike, rows: Iterable[Tuple[float, float, float, float, int]]) -> Path:
    """Empty cells (n = 0) are written with blank error columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HEATMAP_HEADER)
        for cell_x, cell_z, mae_x, mae_z, n in rows:
            if n == 0:
                writer.writerow([repr(cell_x), repr(cell_z), "", "", 0])
            else:
                writer.writerow([repr(cell_x), repr(cell_z), repr(mae_x), repr(mae_z), n])
    return path


# Lift records


def write_lift_records(
    path: PathLike, records: Iterable[Tuple[int, Any, Sequence[float]]]
) -> Path:
    """Write (frame_id, person_id, offsets) triples, one JSON object per line."""
    return write_jsonl(
        path,
        (
            {"frame_id": frame_id, "person_id": person_id, "d": [float(v) for v in offsets]}
            for frame_id, person_id, offsets in records
        ),
    )


def read_lift_records(path: PathLike) -> Dict[Tuple[int, Any], np.ndarray]:
    """
    Load every lift record, keyed by (frame_id, person_id).

    Raises
    ------
    ParseError
        Malformed row or wrong offset count.
    ValidationError
        Root offset differs from 0.
    """
    records: Dict[Tuple[int, Any], np.ndarray] = {}
    for line, row in read_jsonl(path):
        frame_id = _require(row, "frame_id", path, line)
        person_id = _require(row, "person_id", path, line)
        offsets = _float_array(_require(row, "d", path, line), (N_JOINTS,), "d", path, line)
        if abs(offsets[0]) > ROOT_OFFSET_TOLERANCE:
            raise ValidationError(
                f"{path}:{line}: root depth offset must be 0, got {offsets[0]}"
            )
        records[(frame_id, person_id)] = offsets
    return records


# Scene dump


@dataclass(frozen=True)
class PersonRecord:
    person_id: int
    ground_xz: Tuple[float, float]
    skeleton: np.ndarray
    scenario: str = "none"


@dataclass(frozen=True)
class RadarFrameRecord:
    radar_id: int
    detections: np.ndarray
    truth_person: Tuple[Optional[int], ...] = ()


@dataclass(frozen=True)
class PoseRecord:
    person_hint: Optional[int]
    keypoints: np.ndarray


@dataclass(frozen=True)
class SceneFrame:
    """One simulated tick: ground truth, per-radar detections and camera 2D poses."""

    frame: int
    truth: Tuple[PersonRecord, ...] = ()
    radars: Tuple[RadarFrameRecord, ...] = ()
    poses: Tuple[PoseRecord, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame": self.frame,
            "truth": [
                {
                    "person_id": p.person_id,
                    "ground_xz": [float(v) for v in p.ground_xz],
                    "skeleton": np.asarray(p.skeleton, dtype=float).tolist(),
                    "scenario": p.scenario,
                }
                for p in self.truth
            ],
            "radars": [
                {
                    "radar_id": r.radar_id,
                    "detections": np.asarray(r.detections, dtype=float).reshape(-1, 2).tolist(),
                    "truth_person": list(r.truth_person),
                }
                for r in self.radars
            ],
            "poses": [
                {
                    "person_hint": p.person_hint,
                    "keypoints": np.asarray(p.keypoints, dtype=float).tolist(),
                }
                for p in self.poses
            ],
        }

    @classmethod
    def from_dict(cls, row: Dict[str, Any], path: PathLike = "<memory>", line: int = 0):
        truth = tuple(
            PersonRecord(
                person_id=_int(p, "person_id", path, line),
                ground_xz=tuple(_float_array(p.get("ground_xz"), (2,), "ground_xz", path, line)),
                skeleton=_float_array(p.get("skeleton"), (N_JOINTS, 3), "skeleton", path, line),
                scenario=_scenario(p, path, line),
            )
            for p in _objects(row, "truth", path, line)
        )
        radars = []
        for r in _objects(row, "radars", path, line):
            detections = _detections(r.get("detections", []), path, line)
            truth_person = r.get("truth_person", [])
            if not isinstance(truth_person, list):
                raise ParseError(path, line, "truth_person must be a list")
            if truth_person and len(truth_person) != len(detections):
                raise ParseError(path, line, "truth_person length differs from detections")
            radars.append(
                RadarFrameRecord(
                    radar_id=_int(r, "radar_id", path, line),
                    detections=detections,
                    truth_person=tuple(truth_person),
                )
            )
        poses = tuple(
            PoseRecord(
                person_hint=p.get("person_hint"),
                keypoints=_float_array(
                    p.get("keypoints"), (N_JOINTS, 3), "keypoints", path, line
                ),
            )
            for p in _objects(row, "poses", path, line)
        )
        return cls(
            frame=_int(row, "frame", path, line),
            truth=truth,
            radars=tuple(radars),
            poses=poses,
        )


def write_scene(path: PathLike, frames: Iterable[SceneFrame]) -> Path:
    return write_jsonl(path, (f.to_dict() for f in frames))


def read_scene(path: PathLike) -> List[SceneFrame]:
    return [SceneFrame.from_dict(row, path, line) for line, row in read_jsonl(path)]


# Placed poses


@dataclass(frozen=True)
class PlacedPoseRecord:
    frame: int
    person_hint: Optional[Any]
    source_radar: int
    detection_index: int
    mean_x: float
    projected_x: float
    root_xz: Tuple[float, float]
    keypoints: np.ndarray
    scenario: str = field(default="none")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame": self.frame,
            "person_hint": self.person_hint,
            "source_radar": self.source_radar,
            "detection_index": self.detection_index,
            "mean_x": float(self.mean_x),
            "projected_x": float(self.projected_x),
            "root_xz": [float(v) for v in self.root_xz],
            "keypoints": np.asarray(self.keypoints, dtype=float).tolist(),
            "scenario": self.scenario,
        }

    @classmethod
    def from_dict(cls, row: Dict[str, Any], path: PathLike = "<memory>", line: int = 0):
        return cls(
            frame=_int(row, "frame", path, line),
            person_hint=row.get("person_hint"),
            source_radar=_int(row, "source_radar", path, line),
            detection_index=_int(row, "detection_index", path, line),
            mean_x=_float(_require(row, "mean_x", path, line), "mean_x", path, line),
            projected_x=_float(
                _require(row, "projected_x", path, line), "projected_x", path, line
            ),
            root_xz=tuple(_float_array(row.get("root_xz"), (2,), "root_xz", path, line)),
            keypoints=_float_array(row.get("keypoints"), (N_JOINTS, 3), "keypoints", path, line),
            scenario=_scenario(row, path, line),
        )


def write_pose_records(path: PathLike, records: Iterable[PlacedPoseRecord]) -> Path:
    return write_jsonl(path, (r.to_dict() for r in records))


def read_pose_records(path: PathLike) -> List[PlacedPoseRecord]:
    return [PlacedPoseRecord.from_dict(row, path, line) for line, row in read_jsonl(path)]
