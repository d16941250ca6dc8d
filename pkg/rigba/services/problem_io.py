"""Plain-text problem files (``RIGBA 1``).

One record per line::

    RIGBA 1
    STREAM <id> <focal> <cx> <cy> <k1> <k2>
    IMAGE <id> <stream_id> <time_index> <rx> <ry> <rz> <cx> <cy> <cz>
    LANDMARK <id> <x> <y> <z>
    OBS <image_id> <landmark_id> <u> <v>
    RIG_PAIR <time_index> <image_id_a> <image_id_b>

Lines starting with ``#`` and blank lines are ignored. Floats are written as shortest
round-trip decimals, so reading a written problem reproduces it exactly.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from pathlib import Path

from rigba.errors import DomainError, ParseError
from rigba.models.geometry import CameraPose, Intrinsics, Landmark, Observation, Rotation
from rigba.models.problem import RigPair, RigProblem

logger = logging.getLogger(__name__)

FORMAT_HEADER = "RIGBA"
FORMAT_VERSION = 1

RECORD_FIELDS = {
    "STREAM": 6,
    "IMAGE": 9,
    "LANDMARK": 4,
    "OBS": 4,
    "RIG_PAIR": 3,
}


def _f(value: float) -> str:
    return repr(float(value))


def format_problem(problem: RigProblem) -> str:
    lines = [f"{FORMAT_HEADER} {FORMAT_VERSION}"]
    for stream_id in sorted(problem.streams):
        k = problem.streams[stream_id].intrinsics
        values = " ".join(_f(v) for v in (k.focal, *k.principal_point, *k.radial))
        lines.append(f"STREAM {stream_id} {values}")
    for image_id in sorted(problem.images):
        image = problem.images[image_id]
        values = " ".join(_f(v) for v in (*image.pose.rotation.axis_angle, *image.pose.center))
        lines.append(f"IMAGE {image_id} {image.stream_id} {image.time_index} {values}")
    for landmark_id in sorted(problem.landmarks):
        values = " ".join(_f(v) for v in problem.landmarks[landmark_id].position)
        lines.append(f"LANDMARK {landmark_id} {values}")
    for obs in problem.observations:
        lines.append(f"OBS {obs.image_id} {obs.landmark_id} {_f(obs.pixel[0])} {_f(obs.pixel[1])}")
    for pair in sorted(problem.rig_pairs):
        lines.append(f"RIG_PAIR {pair.time_index} {pair.image_id_a} {pair.image_id_b}")
    return "\n".join(lines) + "\n"


def write_problem(problem: RigProblem, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_problem(problem), encoding="utf-8")
    logger.debug(f"Wrote problem to {path}")
    return path


@dataclass(frozen=True)
class _Record:
    line_number: int
    kind: str
    fields: list[str]

    def fail(self, message: str) -> ParseError:
        return ParseError(self.line_number, self.kind, message)

    def ints(self, start: int, stop: int) -> list[int]:
        return [self._convert(v, int, "integer") for v in self.fields[start:stop]]

    def floats(self, start: int, stop: int) -> list[float]:
        values = [self._convert(v, float, "number") for v in self.fields[start:stop]]
        if not all(math.isfinite(v) for v in values):
            raise self.fail("non-finite value")
        return values

    def _convert(self, value: str, cast: Callable[[str], int | float], what: str) -> int | float:
        try:
            return cast(value)
        except ValueError:
            raise self.fail(f"expected {what}, got {value!r}") from None


def _tokenize(lines: Iterable[str]) -> list[_Record]:
    records: list[_Record] = []
    header_seen = False
    for line_number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind, *fields = line.split()
        if not header_seen:
            if kind != FORMAT_HEADER:
                raise ParseError(line_number, kind, f"expected '{FORMAT_HEADER} {FORMAT_VERSION}' header")
            if fields != [str(FORMAT_VERSION)]:
                raise ParseError(line_number, kind, f"unsupported format version {' '.join(fields)!r}")
            header_seen = True
            continue
        if kind not in RECORD_FIELDS:
            raise ParseError(line_number, kind, "unknown record kind")
        if len(fields) != RECORD_FIELDS[kind]:
            raise ParseError(
                line_number, kind, f"expected {RECORD_FIELDS[kind]} fields, got {len(fields)}"
            )
        records.append(_Record(line_number, kind, fields))
    if not header_seen:
        raise ParseError(0, FORMAT_HEADER, "missing header")
    return records


def parse_problem(text: str) -> RigProblem:
    """Build a problem from file contents; every image and landmark is registered.

    Raises:
        ParseError: malformed record, duplicate id or dangling reference
    """
    records = _tokenize(text.splitlines())
    problem = RigProblem()
    # streams and images before the records that reference them, whatever the file order
    order = {"STREAM": 0, "IMAGE": 1, "LANDMARK": 2, "OBS": 3, "RIG_PAIR": 4}
    for record in sorted(records, key=lambda r: (order[r.kind], r.line_number)):
        try:
            _apply(problem, record)
        except DomainError as exc:
            raise record.fail(exc.message) from None
    problem.register_all()
    logger.debug(
        f"Parsed problem: {len(problem.images)} images, {len(problem.landmarks)} landmarks, "
        f"{len(problem.observations)} observations, {len(problem.rig_pairs)} rig pairs"
    )
    return problem


def _apply(problem: RigProblem, record: _Record) -> None:
    if record.kind == "STREAM":
        (stream_id,) = record.ints(0, 1)
        f, cx, cy, k1, k2 = record.floats(1, 6)
        problem.add_stream(stream_id, Intrinsics(f, (cx, cy), (k1, k2)))
    elif record.kind == "IMAGE":
        image_id, stream_id, time_index = record.ints(0, 3)
        rx, ry, rz, cx, cy, cz = record.floats(3, 9)
        pose = CameraPose(Rotation((rx, ry, rz)), (cx, cy, cz))
        problem.add_image(image_id, stream_id, time_index, pose)
    elif record.kind == "LANDMARK":
        (landmark_id,) = record.ints(0, 1)
        problem.add_landmark(landmark_id, Landmark(tuple(record.floats(1, 4))))
    elif record.kind == "OBS":
        image_id, landmark_id = record.ints(0, 2)
        u, v = record.floats(2, 4)
        problem.add_observation(Observation(image_id, landmark_id, (u, v)))
    else:
        time_index, image_id_a, image_id_b = record.ints(0, 3)
        problem.add_rig_pair(RigPair(time_index, image_id_a, image_id_b))


def read_problem(path: Path) -> RigProblem:
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(0, FORMAT_HEADER, f"{path} is not UTF-8 text: {exc}") from exc
    except OSError as exc:
        raise ParseError(0, FORMAT_HEADER, f"cannot read {path}: {exc}") from exc
    problem = parse_problem(text)
    logger.info(f"Read {path}: {len(problem.images)} images, {len(problem.landmarks)} landmarks")
    return problem
