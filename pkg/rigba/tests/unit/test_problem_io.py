"""Unit tests for reading and writing problem files."""

import pytest

from rigba.errors import ParseError
from rigba.schemas.scene import NoiseSpec
from rigba.services.problem_io import format_problem, parse_problem, read_problem, write_problem
from rigba.services.scene_sim import generate_scene
from rigba.tests.scenes import small_scene_spec

HEADER = "RIGBA 1\nSTREAM 0 1000.0 500.0 500.0 0.0 0.0\nSTREAM 1 1000.0 500.0 500.0 0.0 0.0\n"


def assert_same_problem(a, b) -> None:
    assert {i: s.intrinsics for i, s in a.streams.items()} == {i: s.intrinsics for i, s in b.streams.items()}
    assert {i: (img.stream_id, img.time_index, img.pose) for i, img in a.images.items()} == {
        i: (img.stream_id, img.time_index, img.pose) for i, img in b.images.items()
    }
    assert a.landmarks == b.landmarks
    assert a.observations == b.observations
    assert a.rig_pairs == b.rig_pairs


@pytest.mark.unit
class TestReadProblem:
    """Tests for parsing problem files."""

    def test_minimal_fixture(self, minimal_problem_path) -> None:
        problem = read_problem(minimal_problem_path)

        assert sorted(problem.streams) == [0, 1]
        assert problem.images[1].pose.center == (1.0, 0.0, 0.0)
        assert problem.landmarks[0].position == (0.1, 0.0, 1.0)
        assert [(o.image_id, o.landmark_id, o.pixel) for o in problem.observations] == [
            (0, 0, (601.5, 499.0))
        ]
        assert problem.registered_images == {0, 1}
        assert problem.active_landmarks == {0}
        assert problem.weights.n_total_pairs == 1

    def test_records_may_appear_in_any_order(self) -> None:
        text = (
            "RIGBA 1\n"
            "RIG_PAIR 0 0 1\n"
            "OBS 0 0 500.0 500.0\n"
            "IMAGE 1 1 0 0.0 0.0 0.0 1.0 0.0 0.0\n"
            "LANDMARK 0 0.0 0.0 2.0\n"
            "IMAGE 0 0 0 0.0 0.0 0.0 0.0 0.0 0.0\n"
            "STREAM 1 1000.0 500.0 500.0 0.0 0.0\n"
            "STREAM 0 1000.0 500.0 500.0 0.0 0.0\n"
        )
        problem = parse_problem(text)
        assert len(problem.rig_pairs) == 1
        assert len(problem.observations) == 1

    def test_comments_and_blank_lines_ignored(self) -> None:
        problem = parse_problem("# leading comment\n\n" + HEADER + "\n# trailing\n")
        assert sorted(problem.streams) == [0, 1]

    @pytest.mark.parametrize(
        "text,line_number,kind",
        [
            ("STREAM 0 1.0 0.0 0.0 0.0 0.0\n", 1, "STREAM"),
            ("RIGBA 2\n", 1, "RIGBA"),
            (HEADER + "CAMERA 0\n", 4, "CAMERA"),
            (HEADER + "IMAGE 0 0 0 0.0 0.0 0.0\n", 4, "IMAGE"),
            (HEADER + "LANDMARK 0 1.0 x 2.0\n", 4, "LANDMARK"),
            (HEADER + "LANDMARK 0 1.0 nan 2.0\n", 4, "LANDMARK"),
            (HEADER + "LANDMARK 1.5 1.0 1.0 2.0\n", 4, "LANDMARK"),
            (HEADER + "STREAM 0 900.0 500.0 500.0 0.0 0.0\n", 4, "STREAM"),
            (HEADER + "STREAM 2 -5.0 500.0 500.0 0.0 0.0\n", 4, "STREAM"),
            (HEADER + "IMAGE 0 7 0 0.0 0.0 0.0 0.0 0.0 0.0\n", 4, "IMAGE"),
            (HEADER + "IMAGE 0 0 0 0 0 0 0 0 0\nOBS 0 3 1.0 1.0\n", 5, "OBS"),
            (
                HEADER
                + "IMAGE 0 0 0 0 0 0 0 0 0\nIMAGE 1 0 0 0 0 0 1 0 0\nRIG_PAIR 0 0 1\n",
                6,
                "RIG_PAIR",
            ),
        ],
    )
    def test_malformed_input_names_line_and_kind(self, text: str, line_number: int, kind: str) -> None:
        with pytest.raises(ParseError) as exc_info:
            parse_problem(text)
        assert exc_info.value.line_number == line_number
        assert exc_info.value.record_kind == kind
        assert exc_info.value.error == "PARSE_ERROR"

    def test_missing_header(self) -> None:
        with pytest.raises(ParseError):
            parse_problem("")

    def test_missing_file(self, tmp_path) -> None:
        with pytest.raises(ParseError) as exc_info:
            read_problem(tmp_path / "absent.rigba")
        assert exc_info.value.line_number == 0

    def test_binary_file(self, tmp_path) -> None:
        path = tmp_path / "binary.rigba"
        path.write_bytes(b"\xff\xfe\x00RIGBA")
        with pytest.raises(ParseError):
            read_problem(path)

    def test_error_document_names_the_record(self) -> None:
        with pytest.raises(ParseError) as exc_info:
            parse_problem(HEADER + "IMAGE 0 0 0 0.0 0.0 0.0\n")

        document = exc_info.value.to_response()

        assert document.error == "PARSE_ERROR"
        assert document.message.startswith("line 4: IMAGE:")
        assert document.details is not None
        assert document.details[0].field == "IMAGE"
        assert document.details[0].message.startswith("line 4:")


@pytest.mark.unit
class TestWriteProblem:
    """Tests for writing problem files."""

    def test_generated_scenes_survive_a_write_read_cycle(self, tmp_path) -> None:
        spec = small_scene_spec(n_time_steps=6, n_landmarks=120, window=4)
        for seed in range(100):
            bundle = generate_scene(spec.model_copy(update={"layout_seed": seed}), NoiseSpec(seed=seed))
            path = write_problem(bundle.initial, tmp_path / f"scene_{seed}.rigba")
            assert_same_problem(read_problem(path), bundle.initial)

    def test_output_is_stable(self, noisy_bundle) -> None:
        text = format_problem(noisy_bundle.initial)
        assert format_problem(parse_problem(text)) == text
        assert text.startswith("RIGBA 1\n")
