"""External-model fixture: the step-function stump (x0 <= 1.5 -> 0, else 4)."""
import json
import sys

print(json.dumps({"type": "hello", "d": 1, "task": "regression", "k": 1}), flush=True)
for line in sys.stdin:
    msg = json.loads(line)
    outputs = [[0.0 if row[0] <= 1.5 else 4.0] for row in msg["inputs"]]
    print(json.dumps({"type": "result", "id": msg["id"], "outputs": outputs}), flush=True)
