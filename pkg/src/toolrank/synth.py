"""Seeded synthetic tool corpora where the instruction is what disambiguates.

Each family of tools shares a family keyword; each tool also carries its own
variant keyword.  A task's query names only the family, so every tool in the
family looks equally good from the query alone.  The instruction names the
variant of the labelled tool.

Keywords are random alphanumeric tokens.  Every keyword is redrawn until its
hash bucket (for the configured embedding dim) is unused by any filler word,
noise word or earlier keyword, so the hash embedder cannot confuse them.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass

from .corpus import Category, Task, ToolRecord
from .embed import fnv1a_64, tokenize

QUERY_TEMPLATE = "Which tool can handle {family} requests?"
INSTRUCTION_TEMPLATE = "Use the {variant} variant."
DESCRIPTION_TEMPLATE = "Performs {family} {variant} operations."
NOISE_POOL_SIZE = 8
MAX_NOISE_PER_TOOL = 3

_FAMILY_SUBSETS = (Category.WEB, Category.CODE, Category.CUSTOM)
_ALPHABET = string.ascii_lowercase + string.digits


@dataclass(frozen=True)
class SynthSpec:
    n_families: int
    tools_per_family: int
    tasks_per_family: int
    dim: int
    seed: int = 0

    def __post_init__(self):
        if self.n_families < 1:
            raise ValueError("n_families must be >= 1")
        if self.tools_per_family < 2:
            raise ValueError("tools_per_family must be >= 2")
        if self.tasks_per_family < 0:
            raise ValueError("tasks_per_family must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def n_keywords(self) -> int:
        return self.n_families * (1 + self.tools_per_family)


def _filler_words() -> set[str]:
    words = set()
    for template in (QUERY_TEMPLATE, INSTRUCTION_TEMPLATE, DESCRIPTION_TEMPLATE):
        words.update(tokenize(template.format(family="", variant="")))
    return words


class _KeywordDrawer:
    def __init__(self, rng: random.Random, dim: int, reserved: set[int]):
        self.rng = rng
        self.dim = dim
        self.used = set(reserved)
        self.words: set[str] = set()

    def draw(self, prefix: str) -> str:
        if len(self.used) >= self.dim:
            raise ValueError(f"embedding dim {self.dim} too small for the requested number of keywords")
        while True:
            word = prefix + "".join(self.rng.choice(_ALPHABET) for _ in range(7))
            bucket = fnv1a_64(word.encode("utf-8")) % self.dim
            if bucket in self.used or word in self.words:
                continue
            self.used.add(bucket)
            self.words.add(word)
            return word


def gen_synthetic(spec: SynthSpec) -> tuple[list[ToolRecord], list[Task]]:
    rng = random.Random(spec.seed)
    reserved = {fnv1a_64(w.encode("utf-8")) % spec.dim for w in _filler_words()}
    if spec.n_keywords + NOISE_POOL_SIZE + len(reserved) > spec.dim:
        raise ValueError(
            f"dim {spec.dim} cannot hold {spec.n_keywords} keywords, {NOISE_POOL_SIZE} noise words "
            f"and {len(reserved)} filler buckets without collisions"
        )
    drawer = _KeywordDrawer(rng, spec.dim, reserved)
    # disjoint pools by prefix: n = noise, f = family, v = variant
    noise = [drawer.draw("n") for _ in range(NOISE_POOL_SIZE)]

    tools: list[ToolRecord] = []
    tasks: list[Task] = []
    width = max(4, len(str(spec.n_families * spec.tools_per_family)))
    for f in range(spec.n_families):
        subset = _FAMILY_SUBSETS[f % len(_FAMILY_SUBSETS)]
        family = drawer.draw("f")
        members: list[tuple[str, str]] = []
        for _ in range(spec.tools_per_family):
            variant = drawer.draw("v")
            tool_id = f"tool_{len(tools):0{width}d}"
            extra = rng.choices(noise, k=rng.randint(0, MAX_NOISE_PER_TOOL))
            tools.append(
                ToolRecord(
                    tool_id=tool_id,
                    name=f"{family}_{variant}",
                    description=" ".join([DESCRIPTION_TEMPLATE.format(family=family, variant=variant), *extra]),
                    category=subset,
                    domain=f"family-{f}",
                )
            )
            members.append((tool_id, variant))
        for _ in range(spec.tasks_per_family):
            tool_id, variant = members[rng.randrange(len(members))]
            tasks.append(
                Task(
                    task_id=f"task_{len(tasks):0{width}d}",
                    query=QUERY_TEMPLATE.format(family=family),
                    instruction=INSTRUCTION_TEMPLATE.format(variant=variant),
                    relevant_tool_ids=(tool_id,),
                    subset=subset,
                )
            )
    return tools, tasks
