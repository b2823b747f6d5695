"""Fixed prompt text: scaffold constants and the question-template set.

The 20 alignment questions (4 item properties x 5 phrasings) ship as package
data in `assets/risa_templates.txt`, one `property<TAB>template` line each,
with `{PROPERTY}`-style fill-in markers. Custom template files in the same
format can be loaded with `load_template_file`.

`assets/summarization_prompt.txt` is carried as a data constant for
description-summarization pipelines; nothing in this package executes it.
"""

from __future__ import annotations

import importlib.resources

from .errors import ParseError

PROPERTIES = ("brand", "category", "title", "description")
TEMPLATES_PER_PROPERTY = 5

# Fixed preamble placed once at the start of every prompt.
HISTORY_PREAMBLE = "The user consumed these items in order:"

# Instruction that precedes the [REC] token on recommendation prompts.
REC_INSTRUCTION = "Generate a recommendation token for the next item to be consumed"

# Answer scaffold for alignment targets, e.g.
# "The brand likely to be consumed is 'WOLT'".
ANSWER_SCAFFOLD = "The {PROPERTY} likely to be consumed is '{VALUE}'"

# Alignment targets for the description property are capped at this many
# tokens; full descriptions dominate training cost without changing the
# objective.
DESCRIPTION_TARGET_CAP = 32


class RISATemplateSet:
    """Exactly 5 question templates for each of the 4 item properties."""

    def __init__(self, entries):
        self.by_property: dict[str, list[str]] = {p: [] for p in PROPERTIES}
        for prop, text in entries:
            if prop not in self.by_property:
                raise ValueError(f"unknown property {prop!r}")
            if not text.strip():
                raise ValueError(f"empty template for property {prop!r}")
            self.by_property[prop].append(text)
        for prop, texts in self.by_property.items():
            if len(texts) != TEMPLATES_PER_PROPERTY:
                raise ValueError(f"property {prop!r} has {len(texts)} templates, expected {TEMPLATES_PER_PROPERTY}")

    def __len__(self) -> int:
        return len(PROPERTIES) * TEMPLATES_PER_PROPERTY

    def question(self, template_index: int) -> tuple[str, str]:
        """Map a flat index in [0, 20) to (property, rendered question)."""
        if not 0 <= template_index < len(self):
            raise ValueError(f"template index {template_index} out of range")
        prop = PROPERTIES[template_index // TEMPLATES_PER_PROPERTY]
        text = self.by_property[prop][template_index % TEMPLATES_PER_PROPERTY]
        return prop, text.replace("{PROPERTY}", prop)

    def entries(self):
        for prop in PROPERTIES:
            for text in self.by_property[prop]:
                yield prop, text


def render_answer(prop: str, value: str) -> str:
    if prop not in PROPERTIES:
        raise ValueError(f"unknown property {prop!r}")
    return ANSWER_SCAFFOLD.replace("{PROPERTY}", prop).replace("{VALUE}", value)


def load_template_file(path) -> RISATemplateSet:
    """Parse a `property<TAB>template` file into a template set."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'property<TAB>template'")
            entries.append((parts[0], parts[1]))
    return RISATemplateSet(entries)


def _load_packaged_templates() -> RISATemplateSet:
    text = importlib.resources.files("ilrec").joinpath("assets/risa_templates.txt").read_text("utf-8")
    entries = []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        prop, template = line.split("\t", 1)
        entries.append((prop, template))
    return RISATemplateSet(entries)


DEFAULT_TEMPLATES = _load_packaged_templates()


def summarization_prompt() -> str:
    """The stored description-summarization prompt (data only, never run)."""
    return importlib.resources.files("ilrec").joinpath("assets/summarization_prompt.txt").read_text("utf-8")
