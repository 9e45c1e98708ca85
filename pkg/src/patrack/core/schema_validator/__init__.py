"""
Schema Validator - JSON Schema checks for emitted documents.

Validates reports (evaluation results, entropy, parameter tables) before they
are written. Never transforms data.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Any

from jsonschema import Draft7Validator

from patrack.exceptions import PatrackException


class SchemaValidationError(PatrackException):
    """Document does not match its schema."""

    def __init__(self, schema: str, errors: list[str]):
        self.errors = errors
        super().__init__(
            code="SCHEMA_VALIDATION_FAILED",
            message=f"{schema}: schema validation failed: {', '.join(errors)}",
            exit_code=1,
            details={"schema": schema, "errors": errors},
        )


@lru_cache(maxsize=None)
def load_schema(package: str, filename: str) -> dict[str, Any]:
    """Read a schema file shipped inside a package."""
    text = resources.files(package).joinpath(filename).read_text(encoding="utf-8")
    schema: dict[str, Any] = json.loads(text)
    Draft7Validator.check_schema(schema)
    return schema


class SchemaValidator:
    """Draft 7 validator."""

    @staticmethod
    def errors(data: Any, schema: dict[str, Any]) -> list[str]:
        validator = Draft7Validator(schema)
        return [
            f"{'.'.join(str(p) for p in error.path) or '<root>'}: {error.message}"
            for error in sorted(validator.iter_errors(data), key=lambda e: [str(p) for p in e.path])
        ]

    @staticmethod
    def validate(data: Any, schema: dict[str, Any], name: str = "document") -> None:
        problems = SchemaValidator.errors(data, schema)
        if problems:
            raise SchemaValidationError(name, problems)


__all__ = ["SchemaValidationError", "SchemaValidator", "load_schema"]
