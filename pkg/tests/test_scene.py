"""Scene generation, question programs, and dataset serialization tests."""

import numpy as np
import pytest

from vqalab.geometry import Box, iou
from vqalab.scene import (
    ANSWERS,
    ANSWER_INDEX,
    CLASSES,
    COLORS,
    DatasetConfig,
    ProgramError,
    QAInstance,
    Scene,
    SceneObject,
    WorldConfig,
    build_dataset,
    execute_program,
    generate_question,
    generate_scene,
    load_dataset,
    rel_holds,
    save_dataset,
)


def make_scene(triples):
    """triples: (cls, color, size, box tuple)."""
    return Scene(
        id=0,
        objects=[
            SceneObject(id=i, cls=c, color=col, size=s, box=Box(*b))
            for i, (c, col, s, b) in enumerate(triples)
        ],
    )


class TestGenerateScene:
    def test_object_count_range(self):
        cfg = WorldConfig(n_objects_min=2, n_objects_max=2)
        scene = generate_scene(cfg, 0)
        assert len(scene.objects) == 2

    def test_deterministic(self):
        cfg = WorldConfig()
        assert generate_scene(cfg, 42) == generate_scene(cfg, 42)

    def test_overlap_bound_over_many_scenes(self):
        cfg = WorldConfig()
        for seed in range(1000):
            scene = generate_scene(cfg, seed)
            for i, a in enumerate(scene.objects):
                for b in scene.objects[i + 1 :]:
                    assert iou(a.box, b.box) <= cfg.max_overlap + 1e-12

    def test_classes_unique_within_scene(self):
        cfg = WorldConfig()
        for seed in range(200):
            scene = generate_scene(cfg, seed)
            classes = [o.cls for o in scene.objects]
            assert len(classes) == len(set(classes))


class TestRelations:
    def test_antisymmetry(self):
        cfg = WorldConfig()
        for seed in range(200):
            scene = generate_scene(cfg, seed)
            for a in scene.objects:
                for b in scene.objects:
                    if a.id == b.id:
                        continue
                    assert rel_holds("left_of", a, b, 0.05) == rel_holds("right_of", b, a, 0.05)
                    assert rel_holds("above", a, b, 0.05) == rel_holds("below", b, a, 0.05)

    def test_margin_excludes_near_ties(self):
        a = SceneObject(0, "cat", "red", "small", Box(0.40, 0.4, 0.50, 0.5))
        b = SceneObject(1, "dog", "red", "small", Box(0.42, 0.4, 0.52, 0.5))
        assert not rel_holds("left_of", a, b, 0.05)
        assert rel_holds("left_of", a, b, 0.01)


class TestExecutor:
    def test_query_color(self):
        scene = make_scene([("cat", "red", "small", (0.1, 0.1, 0.2, 0.2))])
        answer, touched = execute_program(scene, [{"op": "select", "cls": "cat"}, {"op": "query_color"}])
        assert answer == "red"
        assert touched == [0]

    def test_exists_absent(self):
        scene = make_scene([("cat", "red", "small", (0.1, 0.1, 0.2, 0.2))])
        answer, touched = execute_program(scene, [{"op": "exists", "cls": "dog"}])
        assert answer == "no"
        assert touched == []

    def test_relate_chain_hand_computed(self):
        scene = make_scene(
            [
                ("laptop", "black", "small", (0.70, 0.4, 0.80, 0.5)),
                ("cat", "white", "small", (0.10, 0.4, 0.20, 0.5)),
                ("dog", "red", "large", (0.40, 0.4, 0.50, 0.5)),
            ]
        )
        prog = [
            {"op": "select", "cls": "laptop"},
            {"op": "relate", "relation": "left_of", "family": "animal"},
            {"op": "query_class"},
        ]
        # both animals are left of the laptop -> ambiguous with 2 matches
        with pytest.raises(ProgramError):
            execute_program(scene, prog)
        prog[1]["relation"] = "right_of"
        with pytest.raises(ProgramError):
            execute_program(scene, prog)  # nothing right of the laptop
        # select the dog: only the cat is an animal left of it
        prog2 = [
            {"op": "select", "cls": "dog"},
            {"op": "relate", "relation": "left_of", "family": "animal"},
            {"op": "query_class"},
        ]
        answer, touched = execute_program(scene, prog2)
        assert answer == "cat"
        assert touched == [2, 1]

    def test_check_relation(self):
        scene = make_scene(
            [
                ("cat", "red", "small", (0.1, 0.4, 0.2, 0.5)),
                ("dog", "red", "small", (0.7, 0.4, 0.8, 0.5)),
            ]
        )
        prog = [{"op": "select", "cls": "cat"}, {"op": "check_relation", "relation": "left_of", "cls": "dog"}]
        assert execute_program(scene, prog)[0] == "yes"

    def test_ambiguous_select_raises(self):
        scene = Scene(
            id=0,
            objects=[
                SceneObject(0, "cat", "red", "small", Box(0.1, 0.1, 0.2, 0.2)),
                SceneObject(1, "cat", "blue", "small", Box(0.5, 0.5, 0.6, 0.6)),
            ],
        )
        with pytest.raises(ProgramError):
            execute_program(scene, [{"op": "select", "cls": "cat"}, {"op": "query_color"}])


class TestGenerateQuestion:
    def test_stored_answer_matches_reexecution(self):
        cfg = WorldConfig()
        checked = 0
        seed = 0
        while checked < 10_000:
            scene = generate_scene(cfg, seed)
            qa = generate_question(scene, cfg, seed * 31 + 1)
            answer, touched = execute_program(scene, qa.program, cfg.relation_margin)
            assert ANSWER_INDEX[answer] == qa.answer
            assert sorted(set(touched)) == qa.necessary
            checked += 1
            seed += 1

    def test_category_agrees_with_answer(self):
        cfg = WorldConfig()
        for seed in range(500):
            scene = generate_scene(cfg, seed)
            qa = generate_question(scene, cfg, seed + 7)
            if ANSWERS[qa.answer] in ("yes", "no"):
                assert qa.category == "binary"
            else:
                assert qa.category == "open"

    def test_necessary_nonempty_unless_negative_existence(self):
        cfg = WorldConfig()
        for seed in range(500):
            scene = generate_scene(cfg, seed)
            qa = generate_question(scene, cfg, seed + 13)
            negative_existence = qa.program[0]["op"] == "exists" and ANSWERS[qa.answer] == "no"
            if not negative_existence:
                assert qa.necessary

    def test_necessary_includes_indirect_answer_object(self):
        cfg = WorldConfig()
        found = 0
        for seed in range(2000):
            scene = generate_scene(cfg, seed)
            qa = generate_question(scene, cfg, seed + 3)
            if any(s.get("op") == "relate" for s in qa.program):
                _, touched = execute_program(scene, qa.program, cfg.relation_margin)
                assert touched[-1] in qa.necessary  # the indirectly mentioned answer object
                found += 1
        assert found > 20


class TestDataset:
    def test_split_sizes_and_disjoint_scenes(self):
        cfg = DatasetConfig(train_size=60, val_size=20, test_size=20)
        ds = build_dataset(cfg, 0)
        assert {s: len(v) for s, v in ds.splits.items()} == {"train": 60, "val": 20, "test": 20}
        ids = [set(qa.scene_id for qa in ds.splits[s]) for s in ("train", "val", "test")]
        assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])

    def test_roundtrip_and_byte_identical_regeneration(self, tmp_path):
        cfg = DatasetConfig(train_size=30, val_size=10, test_size=10)
        d1, d2 = tmp_path / "a", tmp_path / "b"
        save_dataset(build_dataset(cfg, 5), d1)
        save_dataset(build_dataset(cfg, 5), d2)
        for name in ("scenes.jsonl", "questions_train.jsonl", "questions_val.jsonl", "questions_test.jsonl"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
        loaded = load_dataset(d1)
        assert loaded.splits["train"] == build_dataset(cfg, 5).splits["train"]

    def test_answer_distribution_counts(self):
        cfg = DatasetConfig(train_size=50, val_size=10, test_size=10)
        ds = build_dataset(cfg, 1)
        dist = ds.answer_distribution("train")
        assert sum(dist.values()) == 50
        assert all(a in ANSWERS for a in dist)
