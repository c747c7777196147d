"""External-model fixture: answers protocol errors for every request."""
import json
import sys

print(json.dumps({"type": "hello", "d": 2, "task": "regression", "k": 1}), flush=True)
for line in sys.stdin:
    msg = json.loads(line)
    print(json.dumps({"type": "error", "id": msg["id"], "message": "refusing on purpose"}),
          flush=True)
