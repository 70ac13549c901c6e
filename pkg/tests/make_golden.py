"""Writes the golden envelope bytes for every protocol message type."""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from golden_corpus import GOLDEN_MESSAGES  # noqa: E402

from grasplab.protocol import encode_message  # noqa: E402


def main() -> None:
    out_dir = pathlib.Path(__file__).parent / "golden"
    out_dir.mkdir(exist_ok=True)
    for msg_type, (seq, body) in GOLDEN_MESSAGES.items():
        path = out_dir / f"{msg_type}.bin"
        path.write_bytes(encode_message(msg_type, seq, body))
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
