"""Toy oracle worker for the external-backend tests.

Usage: worker.py MODE.  ``template`` is 0 based; answers ``correct`` when
the template number is even.  Modes:

ok        answer every request immediately
reverse   buffer requests in groups of 3 and answer them in reverse order
silent    never answer template 3
bad       answer template 2 with a malformed record
die       exit after reading the second request
"""

import json
import sys

mode = sys.argv[1]
buffered = []
seen = 0


def answer(req):
    template = req["template"]["template"]
    if mode == "silent" and template == 3:
        return
    if mode == "bad" and template == 2:
        out = {"request_id": req["request_id"], "correct": "yes"}
    else:
        out = {"request_id": req["request_id"], "correct": template % 2 == 0, "seed": req["instance_seed"]}
    sys.stdout.write(json.dumps(out) + "\n")
    sys.stdout.flush()


for line in sys.stdin:
    req = json.loads(line)
    seen += 1
    if mode == "die" and seen == 2:
        sys.exit(1)
    if mode == "reverse":
        buffered.append(req)
        if len(buffered) == 3:
            for r in reversed(buffered):
                answer(r)
            buffered.clear()
        continue
    answer(req)
for r in reversed(buffered):
    answer(r)
