"""
Small file and hashing helpers shared by the writers in pixelvla.
"""
import os
import tempfile

from cryptography.hazmat.backends import default_backend
from cryptography.hazmat.primitives import hashes


def atomic_write(path, payload):
    """
    Write ``payload`` bytes to ``path`` through a temporary file and a rename.
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(handle, 'wb') as temp_file:
            temp_file.write(payload)
            temp_file.flush()
            os.fsync(temp_file.fileno())
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise


def tensor_digest(named_arrays):
    """
    Return the SHA-256 hex digest of an iterable of ``(name, array)`` pairs.

    Names, shapes, dtypes and raw bytes all enter the digest, so any bitwise
    change to any array changes the result.
    """
    digest = hashes.Hash(hashes.SHA256(), backend=default_backend())
    for name, array in named_arrays:
        digest.update(name.encode('utf-8'))
        digest.update(repr((array.shape, array.dtype.str)).encode('utf-8'))
        digest.update(array.tobytes())
    return digest.finalize().hex()
