_AUTOSAFE_ENTRY = "{{entry_point}}"


def _autosafe_check_arity(fn, n):
    code = getattr(fn, "__code__", None)
    if code is None or not hasattr(fn, "__defaults__"):
        import inspect

        try:
            sig = inspect.signature(fn)
        except (TypeError, ValueError):
            return
        sig.bind(*([None] * n))
        return
    required = code.co_argcount - len(fn.__defaults__ or ())
    most = n if code.co_flags & 0x04 else code.co_argcount
    kwonly = code.co_varnames[code.co_argcount : code.co_argcount + code.co_kwonlyargcount]
    missing = [k for k in kwonly if k not in (fn.__kwdefaults__ or {})]
    if missing:
        raise TypeError("%s() needs keyword-only arguments %s" % (_AUTOSAFE_ENTRY, ", ".join(missing)))
    if not required <= n <= most:
        raise TypeError(
            "%s() takes %d to %d positional arguments but %d were given" % (_AUTOSAFE_ENTRY, required, most, n)
        )


def _autosafe_main():
    import json

    try:
        args = json.loads(_autosafe_sys.stdin.readline())
        if not isinstance(args, list):
            raise TypeError("harness input must be a JSON array")
        fn = globals().get(_AUTOSAFE_ENTRY)
        if not callable(fn):
            raise NameError("entry point %r is not defined" % _AUTOSAFE_ENTRY)
        _autosafe_check_arity(fn, len(args))
    except BaseException:
        _autosafe_traceback.print_exc()
        _autosafe_sys.stderr.flush()
        _autosafe_os._exit(2)

    try:
        fn(*args)
    except SystemExit as exc:
        if exc.code not in (None, 0):
            _autosafe_traceback.print_exc()
            _autosafe_sys.stderr.flush()
            _autosafe_os._exit(1)
    except BaseException:
        _autosafe_traceback.print_exc()
        _autosafe_sys.stderr.flush()
        _autosafe_os._exit(1)
    try:
        _autosafe_sys.stdout.flush()
        _autosafe_sys.stderr.flush()
    finally:
        _autosafe_os._exit(0)


if __name__ == "__main__":
    _autosafe_main()
