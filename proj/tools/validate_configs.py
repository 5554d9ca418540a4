"""Validate experiment configs against the published JSON schema."""

import json
import sys
from pathlib import Path

import jsonschema


def main(argv: list[str]) -> int:
    schema = json.loads(Path(argv[1]).read_text())
    validator = jsonschema.Draft202012Validator(schema)
    failed = 0
    for path in sorted(Path(argv[2]).rglob("*.json")):
        errors = list(validator.iter_errors(json.loads(path.read_text())))
        for e in errors:
            print(f"{path}: {e.json_path}: {e.message}")
        print(f"{'FAIL' if errors else 'ok'} {path}")
        failed += bool(errors)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
