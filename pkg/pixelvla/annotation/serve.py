"""
Oracle backend server speaking the line-delimited JSON backend protocol.

Run as ``python -m pixelvla.annotation.serve [--seed N]``; one JSON request per
line on standard input, one JSON response per line on standard output.
"""
import json
import logging
import sys

from pixelvla.annotation.backends import handle_request
from pixelvla.exceptions import PixelVLAError

logger = logging.getLogger(__name__)


def serve(input_stream, output_stream, suite):
    """
    Answer requests until ``input_stream`` is exhausted; return the number answered.
    """
    answered = 0
    for line in input_stream:
        if not line.strip():
            continue
        try:
            response = handle_request(suite, json.loads(line))
        except (ValueError, KeyError, TypeError, PixelVLAError) as exc:
            logger.warning('Rejected backend request: %s', exc)
            response = {'error': str(exc)}
        output_stream.write(json.dumps(response) + '\n')
        output_stream.flush()
        answered += 1
    return answered


def main(argv=None):
    from pixelvla.cli import run  # pylint: disable=import-outside-toplevel
    return run(['serve-oracle'] + list(sys.argv[1:] if argv is None else argv))


if __name__ == '__main__':
    sys.exit(main())
