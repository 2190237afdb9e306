import sys
import traceback

try:
    with open("program.py", encoding="utf-8") as f:
        _source = f.read()
    _code = compile(_source, "program.py", "exec")
except BaseException:
    traceback.print_exc()
    sys.stderr.flush()
    import os

    os._exit(2)
del _source
exec(_code, {"__name__": "__main__", "__file__": "program.py", "__builtins__": __builtins__})
