"""
Binary checkpoint format for named parameters.

Layout (little-endian): magic ``PXCK``, u32 version, then for every named
parameter: u16 name length, UTF-8 name, u8 rank, ``rank`` u32 dims and the
f32 data. Entries run to the end of the file.
"""
import struct
from collections import OrderedDict

import numpy as np

from pixelvla.exceptions import CheckpointError
from pixelvla.utils import atomic_write

MAGIC = b'PXCK'
VERSION = 1


def encode_checkpoint(named_arrays):
    chunks = [MAGIC, struct.pack('<I', VERSION)]
    for name, array in named_arrays:
        encoded_name = name.encode('utf-8')
        array = np.asarray(array)
        chunks.append(struct.pack('<H', len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack('<B', array.ndim))
        chunks.append(struct.pack('<{}I'.format(array.ndim), *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype='<f4').tobytes())
    return b''.join(chunks)


def decode_checkpoint(payload):
    if payload[:4] != MAGIC:
        raise CheckpointError('Not a checkpoint: bad magic {!r}'.format(payload[:4]))
    if len(payload) < 8:
        raise CheckpointError('Checkpoint truncated in its header')
    version, = struct.unpack_from('<I', payload, 4)
    if version != VERSION:
        raise CheckpointError('Unsupported checkpoint version {}'.format(version))
    tensors = OrderedDict()
    offset = 8
    try:
        while offset < len(payload):
            name_length, = struct.unpack_from('<H', payload, offset)
            offset += 2
            name = payload[offset:offset + name_length].decode('utf-8')
            offset += name_length
            rank, = struct.unpack_from('<B', payload, offset)
            offset += 1
            shape = struct.unpack_from('<{}I'.format(rank), payload, offset)
            offset += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if offset + 4 * count > len(payload):
                raise CheckpointError('Checkpoint truncated inside tensor {}'.format(name))
            data = np.frombuffer(payload, dtype='<f4', count=count, offset=offset)
            offset += 4 * count
            tensors[name] = data.astype(np.float32).reshape(shape)
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError('Checkpoint is corrupt: {}'.format(exc)) from exc
    return tensors


def save_checkpoint(path, module):
    """
    Atomically write every parameter of ``module`` to ``path``.
    """
    atomic_write(path, encode_checkpoint((name, parameter.value) for name, parameter in module.named_parameters()))


def read_checkpoint(path):
    with open(path, 'rb') as checkpoint_file:
        return decode_checkpoint(checkpoint_file.read())


def load_into(module, tensors):
    """
    Copy ``tensors`` into the parameters of ``module``; names and shapes must match exactly.
    """
    parameters = OrderedDict(module.named_parameters())
    missing = [name for name in parameters if name not in tensors]
    unexpected = [name for name in tensors if name not in parameters]
    if missing or unexpected:
        raise CheckpointError(
            'Checkpoint does not match the model (missing: {}, unexpected: {})'.format(missing[:5], unexpected[:5])
        )
    for name, parameter in parameters.items():
        if tensors[name].shape != parameter.value.shape:
            raise CheckpointError(
                'Shape mismatch for {}: checkpoint {} vs model {}'.format(name, tensors[name].shape, parameter.value.shape)
            )
        parameter.value = np.array(tensors[name], dtype=parameter.value.dtype)
        parameter.grad = np.zeros_like(parameter.value)
