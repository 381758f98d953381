"""Procedural mini scene-graph VQA world.

Scenes hold colored, sized objects with normalized boxes; questions are
instantiated from four template families together with an executable
functional program, the answer, and the set of objects the program touches
(the "necessary" set used for grounding supervision).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import Box, iou

# -- vocabularies -----------------------------------------------------------

FAMILIES: dict[str, tuple[str, ...]] = {
    "device": ("laptop", "phone", "camera", "monitor"),
    "furniture": ("chair", "table", "sofa", "shelf"),
    "animal": ("cat", "dog", "bird", "fish"),
    "vehicle": ("car", "bike", "bus", "truck"),
    "food": ("apple", "banana", "pizza", "cake"),
    "plant": ("tree", "flower", "bush", "cactus"),
}
CLASSES: tuple[str, ...] = tuple(c for fam in FAMILIES.values() for c in fam)
FAMILY_OF: dict[str, str] = {c: f for f, cs in FAMILIES.items() for c in cs}
COLORS: tuple[str, ...] = ("red", "blue", "green", "yellow", "black", "white", "orange", "purple")
SIZES: tuple[str, ...] = ("small", "large")

ANSWERS: tuple[str, ...] = ("yes", "no") + CLASSES + COLORS
ANSWER_INDEX: dict[str, int] = {a: i for i, a in enumerate(ANSWERS)}

RELATIONS: tuple[str, ...] = ("left_of", "right_of", "above", "below")
REL_TOKENS: dict[str, tuple[str, ...]] = {
    "left_of": ("left", "of"),
    "right_of": ("right", "of"),
    "above": ("above",),
    "below": ("below",),
}

_TEMPLATE_WORDS = ("what", "color", "is", "the", "there", "a", "left", "right", "of", "above", "below")
WORDS: tuple[str, ...] = _TEMPLATE_WORDS + tuple(FAMILIES) + CLASSES
WORD_INDEX: dict[str, int] = {w: i for i, w in enumerate(WORDS)}
MAX_QUESTION_LEN = 7


class GenerationError(RuntimeError):
    pass


class ProgramError(RuntimeError):
    pass


# -- scene types ------------------------------------------------------------


@dataclass(frozen=True)
class SceneObject:
    id: int
    cls: str
    color: str
    size: str
    box: Box


@dataclass
class Scene:
    id: int
    objects: list[SceneObject]

    def by_class(self, cls: str) -> list[SceneObject]:
        return [o for o in self.objects if o.cls == cls]

    def object(self, oid: int) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)


def rel_holds(relation: str, a: SceneObject, b: SceneObject, margin: float) -> bool:
    """Spatial predicate between box centers with a separation margin."""
    (ax, ay), (bx, by) = a.box.center, b.box.center
    if relation == "left_of":
        return ax <= bx - margin
    if relation == "right_of":
        return ax >= bx + margin
    if relation == "above":
        return ay <= by - margin
    if relation == "below":
        return ay >= by + margin
    raise ValueError(f"unknown relation {relation}")


@dataclass
class QAInstance:
    scene_id: int
    tokens: list[int]
    program: list[dict]
    answer: int
    category: str  # "binary" | "open"
    necessary: list[int]

    @property
    def answer_str(self) -> str:
        return ANSWERS[self.answer]

    def token_strings(self) -> list[str]:
        return [WORDS[t] for t in self.tokens]


# -- config -----------------------------------------------------------------


@dataclass
class WorldConfig:
    n_objects_min: int = 3
    n_objects_max: int = 6
    side_min: float = 0.08
    side_max: float = 0.20
    max_overlap: float = 0.10
    max_tries: int = 200
    relation_margin: float = 0.05
    # relational questions are only emitted when the relation holds with this
    # stronger center separation, so box jitter rarely flips the answer
    question_margin: float = 0.15
    questions_per_scene: int = 2


# -- scene generation -------------------------------------------------------


def generate_scene(cfg: WorldConfig, seed: int, scene_id: int = 0) -> Scene:
    """Rejection-sample non-overlapping objects; deterministic per seed."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(cfg.n_objects_min, cfg.n_objects_max + 1))
    classes = rng.choice(len(CLASSES), size=n, replace=False)
    objects: list[SceneObject] = []
    for i in range(n):
        for attempt in range(cfg.max_tries):
            w = rng.uniform(cfg.side_min, cfg.side_max)
            h = rng.uniform(cfg.side_min, cfg.side_max)
            x1 = rng.uniform(0.0, 1.0 - w)
            y1 = rng.uniform(0.0, 1.0 - h)
            box = Box(x1, y1, x1 + w, y1 + h)
            if all(iou(box, o.box) <= cfg.max_overlap for o in objects):
                break
        else:
            raise GenerationError(f"could not place object {i} after {cfg.max_tries} tries")
        objects.append(
            SceneObject(
                id=i,
                cls=CLASSES[classes[i]],
                color=COLORS[int(rng.integers(len(COLORS)))],
                size=SIZES[int(rng.integers(len(SIZES)))],
                box=box,
            )
        )
    return Scene(id=scene_id, objects=objects)


# -- program execution ------------------------------------------------------


def execute_program(scene: Scene, program: list[dict], margin: float = 0.05):
    """Interpret a select/relate/query/exists chain.

    Returns (answer string, touched object ids). Ambiguous unique-selectors
    raise ProgramError.
    """
    current: SceneObject | None = None
    touched: list[int] = []
    for step in program:
        op = step["op"]
        if op == "select":
            matches = scene.by_class(step["cls"])
            if len(matches) != 1:
                raise ProgramError(f"select {step['cls']}: {len(matches)} matches")
            current = matches[0]
            touched.append(current.id)
        elif op == "relate":
            fam = FAMILIES[step["family"]]
            cands = [
                o
                for o in scene.objects
                if o.cls in fam and o.id != current.id and rel_holds(step["relation"], o, current, margin)
            ]
            if len(cands) != 1:
                raise ProgramError(f"relate {step['relation']} {step['family']}: {len(cands)} matches")
            current = cands[0]
            touched.append(current.id)
        elif op == "query_color":
            return current.color, touched
        elif op == "query_class":
            return current.cls, touched
        elif op == "exists":
            matches = scene.by_class(step["cls"])
            if matches:
                touched.extend(o.id for o in matches)
                return "yes", touched
            return "no", touched
        elif op == "check_relation":
            matches = scene.by_class(step["cls"])
            if len(matches) != 1:
                raise ProgramError(f"check_relation {step['cls']}: {len(matches)} matches")
            other = matches[0]
            touched.append(other.id)
            ans = "yes" if rel_holds(step["relation"], current, other, margin) else "no"
            return ans, touched
        else:
            raise ProgramError(f"unknown op {op}")
    raise ProgramError("program ended without a query")


# -- question generation ----------------------------------------------------


def _tokens(words: list[str]) -> list[int]:
    return [WORD_INDEX[w] for w in words]


def _make_instance(scene: Scene, words: list[str], program: list[dict], cfg: WorldConfig) -> QAInstance:
    answer, touched = execute_program(scene, program, cfg.relation_margin)
    category = "binary" if answer in ("yes", "no") else "open"
    return QAInstance(
        scene_id=scene.id,
        tokens=_tokens(words),
        program=program,
        answer=ANSWER_INDEX[answer],
        category=category,
        necessary=sorted(set(touched)),
    )


def _candidates_attribute(scene: Scene, cfg: WorldConfig):
    out = []
    for o in scene.objects:
        out.append((["what", "color", "is", "the", o.cls], [{"op": "select", "cls": o.cls}, {"op": "query_color"}]))
    return out


def _candidates_relational_query(scene: Scene, cfg: WorldConfig):
    out = []
    for anchor in scene.objects:
        for rel in RELATIONS:
            for fam, members in FAMILIES.items():
                sat_weak = [
                    o
                    for o in scene.objects
                    if o.cls in members and o.id != anchor.id and rel_holds(rel, o, anchor, cfg.relation_margin)
                ]
                if len(sat_weak) != 1:
                    continue
                if not rel_holds(rel, sat_weak[0], anchor, cfg.question_margin):
                    continue
                words = ["what", fam, "is", *REL_TOKENS[rel], "the", anchor.cls]
                prog = [
                    {"op": "select", "cls": anchor.cls},
                    {"op": "relate", "relation": rel, "family": fam},
                    {"op": "query_class"},
                ]
                out.append((words, prog))
    return out


def _candidates_existence(scene: Scene, cfg: WorldConfig, rng: np.random.Generator):
    present = [o.cls for o in scene.objects]
    absent = [c for c in CLASSES if c not in present]
    out = []
    # pair each present-class question with an absent-class one so yes/no stay balanced
    for cls in present:
        out.append((["is", "there", "a", cls], [{"op": "exists", "cls": cls}]))
    for cls in rng.permutation(absent)[: len(present)]:
        out.append((["is", "there", "a", cls], [{"op": "exists", "cls": cls}]))
    return out


def _candidates_relational_existence(scene: Scene, cfg: WorldConfig):
    out = []
    for a in scene.objects:
        for b in scene.objects:
            if a.id == b.id:
                continue
            for rel in RELATIONS:
                # only robust instances: the relation (or its robust negation)
                # must hold with the stronger margin
                if rel_holds(rel, a, b, cfg.question_margin):
                    pass
                elif rel_holds(_opposite(rel), a, b, cfg.question_margin):
                    pass
                else:
                    continue
                words = ["is", "the", a.cls, *REL_TOKENS[rel], "the", b.cls]
                prog = [
                    {"op": "select", "cls": a.cls},
                    {"op": "check_relation", "relation": rel, "cls": b.cls},
                ]
                out.append((words, prog))
    return out


def _opposite(rel: str) -> str:
    return {"left_of": "right_of", "right_of": "left_of", "above": "below", "below": "above"}[rel]


def generate_question(scene: Scene, cfg: WorldConfig, seed: int) -> QAInstance:
    """Instantiate one template; family chosen uniformly among applicable."""
    rng = np.random.default_rng(seed)
    families = [
        _candidates_attribute(scene, cfg),
        _candidates_relational_query(scene, cfg),
        _candidates_existence(scene, cfg, rng),
        _candidates_relational_existence(scene, cfg),
    ]
    applicable = [f for f in families if f]
    if not applicable:
        raise GenerationError(f"no applicable template for scene {scene.id}")
    fam = applicable[int(rng.integers(len(applicable)))]
    words, prog = fam[int(rng.integers(len(fam)))]
    return _make_instance(scene, words, prog, cfg)


# -- dataset ----------------------------------------------------------------


@dataclass
class Dataset:
    scenes: dict[int, Scene]
    splits: dict[str, list[QAInstance]]

    def answer_distribution(self, split: str) -> dict[str, int]:
        counts: dict[str, int] = {}
        for qa in self.splits[split]:
            counts[qa.answer_str] = counts.get(qa.answer_str, 0) + 1
        return dict(sorted(counts.items()))


@dataclass
class DatasetConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    train_size: int = 3000
    val_size: int = 600
    test_size: int = 600


def build_dataset(cfg: DatasetConfig, seed: int) -> Dataset:
    """Generate disjoint train/val/test splits; deterministic per seed."""
    sizes = {"train": cfg.train_size, "val": cfg.val_size, "test": cfg.test_size}
    scenes: dict[int, Scene] = {}
    splits: dict[str, list[QAInstance]] = {}
    scene_id = 0
    for si, (split, size) in enumerate(sizes.items()):
        instances: list[QAInstance] = []
        sub = np.random.default_rng([seed, si]).integers(0, 2**31, size=10 * size + 100)
        cursor = 0
        while len(instances) < size:
            try:
                scene = generate_scene(cfg.world, int(sub[cursor]), scene_id)
            except GenerationError:
                cursor += 1
                continue
            made = 0
            for q in range(cfg.world.questions_per_scene):
                if len(instances) >= size:
                    break
                try:
                    qa = generate_question(scene, cfg.world, int(sub[cursor]) * 7919 + q)
                except GenerationError:
                    continue
                instances.append(qa)
                made += 1
            if made:
                scenes[scene_id] = scene
                scene_id += 1
            cursor += 1
        splits[split] = instances
    return Dataset(scenes=scenes, splits=splits)


# -- serialization ----------------------------------------------------------


def _scene_record(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "objects": [
            {"id": o.id, "cls": o.cls, "color": o.color, "size": o.size, "box": list(o.box.as_tuple())}
            for o in scene.objects
        ],
    }


def _scene_from_record(rec: dict) -> Scene:
    return Scene(
        id=rec["id"],
        objects=[
            SceneObject(id=o["id"], cls=o["cls"], color=o["color"], size=o["size"], box=Box(*o["box"]))
            for o in rec["objects"]
        ],
    )


def save_dataset(ds: Dataset, out_dir) -> list[str]:
    """Write scenes and per-split questions as sorted-key JSONL files."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []
    path = os.path.join(out_dir, "scenes.jsonl")
    with open(path, "w") as f:
        for sid in sorted(ds.scenes):
            f.write(json.dumps(_scene_record(ds.scenes[sid]), sort_keys=True) + "\n")
    written.append(path)
    for split, instances in ds.splits.items():
        path = os.path.join(out_dir, f"questions_{split}.jsonl")
        with open(path, "w") as f:
            for qa in instances:
                f.write(json.dumps(asdict(qa), sort_keys=True) + "\n")
        written.append(path)
    return written


def load_dataset(in_dir) -> Dataset:
    import os

    scenes: dict[int, Scene] = {}
    with open(os.path.join(in_dir, "scenes.jsonl")) as f:
        for line in f:
            scene = _scene_from_record(json.loads(line))
            scenes[scene.id] = scene
    splits: dict[str, list[QAInstance]] = {}
    for split in ("train", "val", "test"):
        path = os.path.join(in_dir, f"questions_{split}.jsonl")
        if not os.path.exists(path):
            continue
        out = []
        with open(path) as f:
            for line in f:
                rec = json.loads(line)
                out.append(QAInstance(**rec))
        splits[split] = out
    return Dataset(scenes=scenes, splits=splits)
