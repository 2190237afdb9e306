import os as _autosafe_os
import sys as _autosafe_sys
import traceback as _autosafe_traceback


def _autosafe_setup_failure(exc_type, exc, tb):
    # Anything escaping module level happened before the call: setup failure.
    _autosafe_traceback.print_exception(exc_type, exc, tb)
    _autosafe_sys.stderr.flush()
    _autosafe_os._exit(2)


_autosafe_sys.excepthook = _autosafe_setup_failure
