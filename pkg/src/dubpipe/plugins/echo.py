"""External stage that echoes every data message back unchanged.

Useful as a wire-protocol smoke test and as the minimal template for real
plug-in stages. Stdlib only, so it runs anywhere a Python interpreter does.
"""

import json
import sys


def emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main():
    emit({"hello": {"name": "echo", "accepts": ["text"], "produces": ["text"], "version": 1}})
    seq = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        kind = msg.get("kind")
        if kind == "data":
            emit(
                {
                    "seq": seq,
                    "kind": "data",
                    "content_type": msg.get("content_type", "text"),
                    "payload": msg.get("payload", ""),
                }
            )
            seq += 1
        elif kind == "end":
            emit({"seq": seq, "kind": "end", "content_type": "text"})
            return 0
        elif kind == "error":
            emit({"seq": seq, "kind": "error", "content_type": "text", "payload": msg.get("payload", "")})
            return 0
    # upstream vanished without a terminal
    print("echo: stdin closed before end", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
