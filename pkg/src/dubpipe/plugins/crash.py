"""External stage that handshakes correctly, then dies on the first data
message. Exists to exercise the engine's crash containment."""

import json
import sys


def main():
    sys.stdout.write(
        json.dumps({"hello": {"name": "crash", "accepts": ["text"], "produces": ["text"], "version": 1}})
        + "\n"
    )
    sys.stdout.flush()
    for line in sys.stdin:
        if line.strip():
            print("crash: going down", file=sys.stderr)
            return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
