"""Synthetic benchmark with planted ground truth.

Each entity has a canonical name, a few attribute tokens, and belongs to a
scene cluster whose spurious tokens ("sky_blue", "viewpoint_aerial", ...)
are shared by every image in the cluster. Image sidecars carry only the
spurious tokens; the attributes live in an answer file that only the mock
VLM reads, so un-enhanced image entries are silent about what they show.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..datamodel import (Document, Modality, Query, QueryKind, TaskSpec,
                         write_jsonl)
from ..embed.hashing import tokenize

DEFAULT_FILLERS = (
    "Unlike the reference image, I want the target image to have",
    "I would like the new image to show",
    "Make it so the picture has",
    "Change this so that it has",
    "Is a version with",
)

SPURIOUS_AXES = {
    "sky": ("blue", "grey", "orange", "overcast", "night", "pink"),
    "viewpoint": ("aerial", "profile", "frontal", "closeup", "wide", "lowangle"),
    "texture": ("grainy", "smooth", "blurry", "sharp", "noisy", "glossy"),
    "light": ("warm", "cold", "backlit", "flat", "harsh", "dim"),
    "palette": ("muted", "vivid", "sepia", "pastel", "neon", "earthy"),
}

KINDS = {
    "animal": ("When was {ref} discovered?", "What does {ref} eat?"),
    "building": ("Who designed {ref}?", "When was {ref} built?"),
    "lake": ("How deep is {ref}?", "Which country borders {ref}?"),
    "painting": ("Who painted {ref}?", "Where is {ref} exhibited?"),
    "dish": ("Where does {ref} come from?", "What goes into {ref}?"),
    "car": ("Who manufactures {ref}?", "When was {ref} launched?"),
}

REGIONS = ("north", "south", "east", "west", "coastal", "inland", "alpine", "delta")

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "gl", "kr", "pl", "st", "tr", "th", "sh", "ch")
_NUCLEI = ("a", "e", "i", "o", "u", "ai", "ou", "ei")
_CODAS = ("", "n", "r", "l", "s", "x", "m")

TASK_IDS = ("SynthCOCO-0", "SynthCOCO-3", "SynthSeek-6", "SynthSeek-8", "SynthCIRR-7")


@dataclass(frozen=True)
class SynthConfig:
    n_entities: int = 200
    distractors_per_entity: int = 3
    caption_noise: float = 0.2
    deixis_rate: float = 1.0
    filler_phrases: tuple[str, ...] = DEFAULT_FILLERS
    seed: int = 0
    attributes_per_entity: int = 4
    entities_per_cluster: int = 10
    train_fraction: float = 0.5

    def __post_init__(self):
        if self.n_entities < 1:
            raise ValueError("n_entities must be >= 1")
        if self.distractors_per_entity < 0:
            raise ValueError("distractors_per_entity must be >= 0")
        for name in ("caption_noise", "deixis_rate", "train_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.attributes_per_entity < 2:
            raise ValueError("attributes_per_entity must be >= 2")
        if self.entities_per_cluster < 1:
            raise ValueError("entities_per_cluster must be >= 1")
        object.__setattr__(self, "filler_phrases", tuple(self.filler_phrases))


@dataclass(frozen=True)
class Entity:
    canonical_name: str
    kind: str
    attribute_tokens: tuple[str, ...]
    spurious_tokens: tuple[str, ...]
    cluster: int
    year: int
    region: str


@dataclass
class SynthWorld:
    config: SynthConfig
    entities: list[Entity]
    # per entity: list of distractor entities (same cluster look, other attributes)
    distractors: list[list[Entity]] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.seed


def _word(rng, syllables: int) -> str:
    return "".join(rng.choice(_ONSETS) + rng.choice(_NUCLEI) + rng.choice(_CODAS)
                   for _ in range(syllables))


def _fresh(rng, used: set, syllables: int) -> str:
    while True:
        w = _word(rng, syllables)
        if w not in used and len(w) > 3:
            used.add(w)
            return w


def spurious_vocabulary() -> set[str]:
    return {f"{axis}_{v}" for axis, vals in SPURIOUS_AXES.items() for v in vals}


def generate_world(config: SynthConfig) -> SynthWorld:
    rng = np.random.default_rng(config.seed)
    # keep generated words clear of every token the templates can emit
    used: set[str] = set()
    for s in spurious_vocabulary():
        used.update(tokenize(s))
    for kind, templates in KINDS.items():
        used.add(kind)
        for t in templates:
            used.update(tokenize(t.replace("{ref}", "")))
    used.update(REGIONS)

    n_attr_vocab = max(3 * config.n_entities, 4 * config.attributes_per_entity)
    attr_vocab = [_fresh(rng, used, 3) for _ in range(n_attr_vocab)]
    axes = sorted(SPURIOUS_AXES)
    n_clusters = -(-config.n_entities // config.entities_per_cluster)
    cluster_spurious = []
    for _ in range(n_clusters):
        picked = rng.choice(len(axes), size=3, replace=False)
        cluster_spurious.append(tuple(
            f"{axes[a]}_{SPURIOUS_AXES[axes[a]][rng.integers(len(SPURIOUS_AXES[axes[a]]))]}"
            for a in sorted(picked)))
    kinds = sorted(KINDS)

    def make_entity(cluster: int, attrs) -> Entity:
        name = f"{_fresh(rng, used, 2)} {_fresh(rng, used, 2)}"
        return Entity(name, kinds[rng.integers(len(kinds))], tuple(attrs),
                      cluster_spurious[cluster], cluster, int(rng.integers(1700, 2020)),
                      REGIONS[rng.integers(len(REGIONS))])

    entities, distractors = [], []
    k = config.attributes_per_entity
    for i in range(config.n_entities):
        cluster = i // config.entities_per_cluster
        attrs = [attr_vocab[j] for j in rng.choice(n_attr_vocab, size=k, replace=False)]
        ent = make_entity(cluster, attrs)
        entities.append(ent)
        ds = []
        for _ in range(config.distractors_per_entity):
            # swap half the attributes (at least one) for others
            n_swap = max(1, k // 2)
            swap = set(rng.choice(k, size=n_swap, replace=False).tolist())
            pool = [a for a in attr_vocab if a not in attrs]
            new = [pool[j] for j in rng.choice(len(pool), size=n_swap, replace=False)]
            it = iter(new)
            dattrs = [next(it) if j in swap else a for j, a in enumerate(attrs)]
            ds.append(make_entity(cluster, dattrs))
        distractors.append(ds)
    return SynthWorld(config, entities, distractors)


# --------------------------------------------------------------------------
# emission

class _Ids:
    def __init__(self, rng):
        self.rng = rng
        self.used: set[str] = set()

    def __call__(self, prefix: str) -> str:
        while True:
            i = f"{prefix}{int(self.rng.integers(16 ** 8)):08x}"
            if i not in self.used:
                self.used.add(i)
                return i


def _tasks() -> dict[str, TaskSpec]:
    T, I, IT = Modality.TEXT, Modality.IMAGE, Modality.IMAGE_TEXT
    specs = [
        TaskSpec("SynthCOCO-0", "SynthCOCO-0", T, I, "image", QueryKind.PLAIN,
                 instruction="Find an image that matches the given caption."),
        TaskSpec("SynthCOCO-3", "SynthCOCO-3", I, T, "text", QueryKind.PLAIN,
                 instruction="Find a description for the given image."),
        TaskSpec("SynthSeek-6", "SynthSeek-6", IT, T, "text", QueryKind.QA,
                 instruction="Answer the question about the image."),
        TaskSpec("SynthSeek-8", "SynthSeek-8", IT, IT, "imagetext", QueryKind.QA,
                 instruction="Find the article that answers the question about the image."),
        TaskSpec("SynthCIRR-7", "SynthCIRR-7", IT, I, "image", QueryKind.MODIFICATION,
                 instruction="Retrieve the image that reflects the requested change."),
    ]
    return {t.task_id: t for t in specs}


def deictic_phrase(kind: str) -> str:
    return f"this {kind}"


def emit_benchmark(world: SynthWorld, out_dir: str | os.PathLike) -> dict:
    """Write corpus pools, train/test queries, sidecars and the answer file.

    Returns the manifest (also written to ``manifest.json``).
    """
    cfg = world.config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([cfg.seed, 1])
    new_id = _Ids(rng)
    axes = sorted(SPURIOUS_AXES)
    answers: dict[str, dict] = {}
    sidecars: dict[str, list[str]] = {}

    def image(ent: Entity) -> tuple[str, str]:
        """Register an image of ``ent``; returns (image_ref, sidecar_ref)."""
        iid = new_id("v")
        ref, tok = f"images/{iid}.jpg", f"tokens/{iid}.txt"
        used_axes = {s.split("_", 1)[0] for s in ent.spurious_tokens}
        free = [a for a in axes if a not in used_axes]
        axis = free[rng.integers(len(free))]
        extra = f"{axis}_{SPURIOUS_AXES[axis][rng.integers(len(SPURIOUS_AXES[axis]))]}"
        toks = list(ent.spurious_tokens) + [extra]
        sidecars[tok] = toks
        answers[ref] = {"canonical_name": ent.canonical_name, "attribute_tokens": list(ent.attribute_tokens),
                        "spurious_tokens": toks, "kind": ent.kind}
        return ref, tok

    pools: dict[str, list[Document]] = {"text": [], "image": [], "imagetext": []}
    text_doc, image_doc, it_doc, distractor_imgs = [], [], [], []
    for e, ds in zip(world.entities, world.distractors):
        attrs = list(e.attribute_tokens)
        desc = (f"{e.canonical_name.title()} is a {e.kind} noted for "
                f"{', '.join(attrs[:-1])} and {attrs[-1]}. First recorded in {e.year}.")
        d = Document(new_id("d"), Modality.TEXT, text=desc)
        pools["text"].append(d)
        text_doc.append(d)
        ref, tok = image(e)
        d = Document(new_id("d"), Modality.IMAGE, image_ref=ref, image_tokens_ref=tok)
        pools["image"].append(d)
        image_doc.append(d)
        ref, tok = image(e)
        blurb = f"{e.canonical_name.title()} is a {e.kind} of the {e.region} region, first recorded in {e.year}."
        d = Document(new_id("d"), Modality.IMAGE_TEXT, text=blurb, image_ref=ref, image_tokens_ref=tok)
        pools["imagetext"].append(d)
        it_doc.append(d)
        refs = []
        for de in ds:
            ref, tok = image(de)
            d = Document(new_id("d"), Modality.IMAGE, image_ref=ref, image_tokens_ref=tok)
            pools["image"].append(d)
            refs.append((ref, tok, de))
        distractor_imgs.append(refs)

    tasks = _tasks()
    order = rng.permutation(len(world.entities))
    n_train = int(round(cfg.train_fraction * len(world.entities)))
    split = {int(i): ("train" if r < n_train else "test") for r, i in enumerate(order)}
    queries: dict[str, list[Query]] = {"train": [], "test": []}
    for i, e in enumerate(world.entities):
        qs = queries[split[i]]
        attrs = list(e.attribute_tokens)
        shown = [attrs[j] for j in sorted(rng.choice(len(attrs), size=max(2, len(attrs) - 1), replace=False))]
        t = tasks["SynthCOCO-0"]
        qs.append(Query(new_id("q"), Modality.TEXT, t.task_id, QueryKind.PLAIN,
                        frozenset({image_doc[i].did}), text=f"A picture of {' '.join(shown)}.",
                        instruction=t.instruction))
        qref, qtok = image(e)
        t = tasks["SynthCOCO-3"]
        qs.append(Query(new_id("q"), Modality.IMAGE, t.task_id, QueryKind.PLAIN,
                        frozenset({text_doc[i].did}), image_ref=qref, image_tokens_ref=qtok,
                        instruction=t.instruction))
        for tid, pos in (("SynthSeek-6", text_doc[i]), ("SynthSeek-8", it_doc[i])):
            t = tasks[tid]
            templates = KINDS[e.kind]
            tmpl = templates[rng.integers(len(templates))]
            ref_phrase = deictic_phrase(e.kind) if rng.random() < cfg.deixis_rate else f"the {e.canonical_name}"
            qs.append(Query(new_id("q"), Modality.IMAGE_TEXT, tid, QueryKind.QA, frozenset({pos.did}),
                            text=tmpl.format(ref=ref_phrase), image_ref=qref, image_tokens_ref=qtok,
                            instruction=t.instruction))
        if distractor_imgs[i]:
            ref, tok, de = distractor_imgs[i][rng.integers(len(distractor_imgs[i]))]
            wanted = [a for a in attrs if a not in de.attribute_tokens]
            filler = cfg.filler_phrases[rng.integers(len(cfg.filler_phrases))] if cfg.filler_phrases else ""
            text = f"{filler} {' and '.join(wanted)}".strip()
            t = tasks["SynthCIRR-7"]
            qs.append(Query(new_id("q"), Modality.IMAGE_TEXT, t.task_id, QueryKind.MODIFICATION,
                            frozenset({image_doc[i].did}), text=text, image_ref=ref, image_tokens_ref=tok,
                            instruction=t.instruction))

    for tok, toks in sidecars.items():
        p = out / tok
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("".join(t + "\n" for t in toks), encoding="utf-8")
    for pid, docs in pools.items():
        write_jsonl((d.to_json() for d in docs), out / "corpus" / f"{pid}.jsonl")
    for split_name, qs in queries.items():
        write_jsonl((q.to_json() for q in qs), out / "queries" / f"{split_name}.jsonl")
    _write_json(out / "tasks.json", {tid: t.to_json() for tid, t in tasks.items()})
    _write_json(out / "answers.json", answers)
    _write_json(out / "world.json", world_to_json(world))
    manifest = {
        "version": 1,
        "tasks": "tasks.json",
        "pools": {pid: f"corpus/{pid}.jsonl" for pid in pools},
        "queries": {s: f"queries/{s}.jsonl" for s in queries},
        "answers": "answers.json",
        "world": "world.json",
        "counts": {
            "entities": len(world.entities),
            "documents": {pid: len(docs) for pid, docs in pools.items()},
            "queries": {s: len(qs) for s, qs in queries.items()},
            "images": len(answers),
        },
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def world_to_json(world: SynthWorld) -> dict:
    return {
        "config": asdict(world.config),
        "entities": [asdict(e) for e in world.entities],
        "distractors": [[asdict(d) for d in ds] for ds in world.distractors],
    }


def world_from_json(doc: dict) -> SynthWorld:
    cfg = SynthConfig(**doc["config"])

    def ent(d):
        return Entity(d["canonical_name"], d["kind"], tuple(d["attribute_tokens"]),
                      tuple(d["spurious_tokens"]), d["cluster"], d["year"], d["region"])
    return SynthWorld(cfg, [ent(e) for e in doc["entities"]],
                      [[ent(d) for d in ds] for ds in doc["distractors"]])
