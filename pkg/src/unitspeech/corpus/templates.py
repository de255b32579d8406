"""Prompt templates for multi-task unit language model training.

Every template is ``Translate <A> <kind> " <field> " to <B> <kind>: " <field> "``;
the model conditions on everything up to and including the final ``: "``
and is trained to produce the remainder (the completion).
"""

import re
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ContractError
from ..frontend import UnitSequence


@dataclass(frozen=True)
class PromptTemplate:
    task: str
    pattern: str

    @property
    def fields(self):
        return re.findall(r"\{(\w+)\}", self.pattern)

    @property
    def output_field(self):
        return self.fields[-1]


TEMPLATES = {
    "ASR-u2t": PromptTemplate("ASR-u2t", 'Translate [lang] unit " {unit} " to [lang] text: " {text} "'),
    "ASR-t2u": PromptTemplate("ASR-t2u", 'Translate [lang] text " {text} " to [lang] unit: " {unit} "'),
    "MT": PromptTemplate("MT", 'Translate [src lang] text " {src_text} " to [tgt lang] text: " {tgt_text} "'),
    "S2ST-1": PromptTemplate("S2ST-1", 'Translate [src lang] unit " {src_unit} " to [tgt lang] unit: " {tgt_unit} "'),
    "S2ST-2": PromptTemplate("S2ST-2", 'Translate [src lang] unit " {src_unit} " to [src lang] text: " {src_text} "'),
    "S2ST-3": PromptTemplate("S2ST-3", 'Translate [src lang] unit " {src_unit} " to [tgt lang] text: " {tgt_text} "'),
    "S2ST-4": PromptTemplate("S2ST-4", 'Translate [src lang] text " {src_text} " to [tgt lang] unit: " {tgt_unit} "'),
    "S2ST-5": PromptTemplate("S2ST-5", 'Translate [tgt lang] text " {tgt_text} " to [tgt lang] unit: " {tgt_unit} "'),
}

# ASR data is <unit, text> in one language; it is read from the source side.
_ASR_FIELDS = {"unit": "src_unit", "text": "src_text"}

UNIT_MARKUP = re.compile(r"<u([1-9]\d*)?:(0|[1-9]\d*)>")


@dataclass
class ParallelRecord:
    utt_id: str
    src_lang: str = "Chinese"
    tgt_lang: str = "English"
    src_unit: UnitSequence = None
    tgt_unit: UnitSequence = None
    src_text: str = None
    tgt_text: str = None
    src_unit_block: int = 0
    tgt_unit_block: int = 0
    meta: dict = field(default_factory=dict)


def unit_markup(units, block=0):
    """Space-separated unit token surface forms, e.g. ``<u:5> <u:17>``."""
    tag = "u" if block == 0 else f"u{block}"
    return " ".join(f"<{tag}:{int(u)}>" for u in units)


def parse_unit_markup(s):
    """Unit IDs from a markup string; raises when anything else is present."""
    s = s.strip()
    if not s:
        return np.zeros(0, dtype=np.int64)
    out = []
    for tok in s.split(" "):
        m = UNIT_MARKUP.fullmatch(tok)
        if m is None:
            raise ContractError(f"not a unit token: {tok!r}")
        out.append(int(m.group(2)))
    return np.array(out, dtype=np.int64)


def _value(record, name):
    attr = _ASR_FIELDS.get(name, name)
    v = getattr(record, attr)
    if isinstance(v, UnitSequence):
        if v.merged_units is None or len(v) == 0:
            return None
        block = record.src_unit_block if attr == "src_unit" else record.tgt_unit_block
        return unit_markup(v.merged_units, block)
    if v is None or v == "":
        return None
    if "\n" in v:
        raise ContractError(f"{record.utt_id}: field {name} contains a newline")
    return v


def has_fields(t, r):
    return all(_value(r, f) is not None for f in t.fields)


def render_parts(t, r):
    """``(prefix, completion)``; ``prefix + completion`` is the full prompt."""
    values = {}
    for name in t.fields:
        v = _value(r, name)
        if v is None:
            raise ContractError(f"task {t.task}: record {r.utt_id} is missing field {name}")
        values[name] = v
    text = t.pattern.replace("[src lang]", r.src_lang).replace("[tgt lang]", r.tgt_lang)
    text = text.replace("[lang]", r.src_lang)
    cut = text.rindex(': "') + 3
    prefix, rest = text[:cut], text[cut:]
    for name, v in values.items():
        prefix = prefix.replace("{" + name + "}", v)
        rest = rest.replace("{" + name + "}", v)
    return prefix, rest


def render_prompt(t, r):
    prefix, completion = render_parts(t, r)
    return prefix + completion


def inference_prefix(t, r):
    """The prompt up to ``: "`` for generation; the output field may be absent."""
    values = {}
    for name in t.fields[:-1]:
        v = _value(r, name)
        if v is None:
            raise ContractError(f"task {t.task}: record {r.utt_id} is missing field {name}")
        values[name] = v
    text = t.pattern.replace("[src lang]", r.src_lang).replace("[tgt lang]", r.tgt_lang)
    text = text.replace("[lang]", r.src_lang)
    prefix = text[: text.rindex(': "') + 3]
    for name, v in values.items():
        prefix = prefix.replace("{" + name + "}", v)
    return prefix


def parse_completion(completion):
    """Strip the `` " `` closing a completion and return the field text."""
    body = completion
    if body.endswith(' "'):
        body = body[:-2]
    elif body.endswith('"'):
        body = body[:-1]
    if body.startswith(" "):
        body = body[1:]
    return body


def sample_prompts(records, tasks=None, weights=None):
    """Every renderable ``(record, task, prefix, completion, weight)`` combination.

    ``weights`` maps task -> relative sampling weight (default uniform over
    the tasks available for each record).
    """
    tasks = list(TEMPLATES) if tasks is None else list(tasks)
    weights = weights or {}
    out = []
    for r in records:
        for task in tasks:
            t = TEMPLATES[task]
            if not has_fields(t, r):
                continue
            prefix, completion = render_parts(t, r)
            out.append((r, task, prefix, completion, float(weights.get(task, 1.0))))
    return out


def write_corpus(path, samples):
    """Rendered prompts, one per line, plus ``<path>.manifest`` (record, task, languages)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh, \
            open(f"{path}.manifest", "w", encoding="utf-8", newline="\n") as mf:
        mf.write("record_id\ttask\tsrc_lang\ttgt_lang\tweight\tprefix_chars\n")
        for r, task, prefix, completion, w in samples:
            fh.write(prefix + completion + "\n")
            mf.write(f"{r.utt_id}\t{task}\t{r.src_lang}\t{r.tgt_lang}\t{w:g}\t{len(prefix)}\n")


def read_corpus(path):
    """``[(record_id, task, prefix, completion, weight)]`` from a corpus file and its manifest."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")[:-1]
    with open(f"{path}.manifest", encoding="utf-8") as mf:
        rows = [ln.split("\t") for ln in mf.read().split("\n")[1:] if ln]
    if len(rows) != len(lines):
        raise ContractError(f"{path}: {len(lines)} prompts but {len(rows)} manifest rows")
    out = []
    for line, (rid, task, _, _, w, cut) in zip(lines, rows):
        out.append((rid, task, line[: int(cut)], line[int(cut):], float(w)))
    return out
