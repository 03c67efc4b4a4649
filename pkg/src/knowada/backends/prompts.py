"""Named prompt templates with {placeholder} substitution.

Templates ship as package data and can be overridden per run by pointing a
directory at files with the same names. The rendered prompt text is what
enters the request cache key, so editing a template automatically
invalidates cached responses.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..errors import ConfigError, ValidationError

TEMPLATE_NAMES = (
    "question_gen",
    "answer_visual",
    "answer_from_text",
    "judge",
    "rewrite",
    "simplify",
    "decompose",
    "nli_label",
    "nli_prob",
)


class PromptLibrary:
    def __init__(self, override_dir: Path | None = None):
        self.override_dir = Path(override_dir) if override_dir else None
        self._cache: dict[str, str] = {}

    def template(self, name: str) -> str:
        if name not in TEMPLATE_NAMES:
            raise ConfigError(f"unknown prompt template {name!r}")
        if name in self._cache:
            return self._cache[name]
        filename = f"{name}.txt"
        if self.override_dir is not None:
            candidate = self.override_dir / filename
            if candidate.exists():
                text = candidate.read_text(encoding="utf-8")
                self._cache[name] = text
                return text
        text = (resources.files(__package__) / "templates" / filename).read_text(encoding="utf-8")
        self._cache[name] = text
        return text

    def render(self, name: str, **values: object) -> str:
        try:
            return self.template(name).format(**values)
        except KeyError as exc:
            raise ValidationError(f"template {name!r} is missing a value for {exc}") from exc
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"template {name!r} has a malformed placeholder: {exc}") from exc


DEFAULT_LIBRARY = PromptLibrary()
