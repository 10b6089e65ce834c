"""Normal / abnormal pathology term pools and the text prompt contract."""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import CategoryMismatch, IndexOutOfRange, ParseError, ValidationError

PLACEHOLDER = "KEYWORD"
DEFAULT_PROMPT = "an image showing KEYWORD"

_WS = re.compile(r"\s+")


class Category(enum.Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"

    @classmethod
    def parse(cls, value) -> "Category":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown category {value!r}") from None


def normalize_term(term: str) -> str:
    """Trim and collapse internal whitespace runs to single spaces."""
    return _WS.sub(" ", term.strip())


@dataclass(frozen=True)
class TermPool:
    category: Category
    terms: tuple[str, ...]
    prompt_template: str = DEFAULT_PROMPT

    def __post_init__(self):
        object.__setattr__(self, "category", Category.parse(self.category))
        if not isinstance(self.prompt_template, str):
            raise ValidationError("prompt_template must be a string")
        n_ph = self.prompt_template.count(PLACEHOLDER)
        if n_ph != 1:
            raise ValidationError(
                f"prompt_template must contain {PLACEHOLDER!r} exactly once, found {n_ph}"
            )
        if not self.terms:
            raise ValidationError("term pool is empty")
        cleaned = []
        seen = set()
        for t in self.terms:
            if not isinstance(t, str):
                raise ValidationError(f"term {t!r} is not a string")
            n = normalize_term(t)
            if not n:
                raise ValidationError("empty term")
            if n in seen:
                raise ValidationError(f"duplicate term {n!r}")
            seen.add(n)
            cleaned.append(n)
        object.__setattr__(self, "terms", tuple(cleaned))

    def __len__(self):
        return len(self.terms)

    def to_dict(self) -> dict:
        return {
            "category": self.category.value,
            "prompt_template": self.prompt_template,
            "terms": list(self.terms),
        }


def render_prompt(pool: TermPool, index: int) -> str:
    if not 0 <= index < len(pool.terms):
        raise IndexOutOfRange(f"term index {index} outside [0, {len(pool.terms)})")
    return pool.prompt_template.replace(PLACEHOLDER, pool.terms[index])


def load_term_pool(path, category) -> TermPool:
    """Read a term-pool JSON file and check it declares ``category``."""
    category = Category.parse(category)
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict) or not {"category", "prompt_template", "terms"} <= raw.keys():
        raise ParseError(f"{path}: expected object with category, prompt_template, terms")
    if not isinstance(raw["terms"], list):
        raise ParseError(f"{path}: 'terms' must be a list")
    declared = Category.parse(raw["category"])
    if declared is not category:
        raise CategoryMismatch(f"{path}: file declares {declared.value}, expected {category.value}")
    return TermPool(declared, tuple(raw["terms"]), raw["prompt_template"])


def save_term_pool(pool: TermPool, path) -> None:
    Path(path).write_text(json.dumps(pool.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
