"""Capture parsing, Matter header decoding, retransmission filtering and trace files.

The trace format is line-delimited JSON, one packet per line, using the
column names of the packet feature table (``src_id_pair``, ``dst_id_pair``,
...). Extra keys such as ``label`` are carried through by the readers that
need them and ignored by :func:`read_trace`.
"""

from __future__ import annotations

import ipaddress
import json
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple, Optional

import dpkt

from matterlens.errors import SchemaViolation, TooShort, UnreadableFile
from matterlens.model import PacketRecord, endpoint_id

log = logging.getLogger(__name__)

MATTER_MIN_HEADER = 8

# message_flags bit layout
FLAG_VERSION_MASK = 0xF0
FLAG_S = 0x04
FLAG_DSIZ_MASK = 0x03
DSIZ_NONE, DSIZ_NODE, DSIZ_GROUP, DSIZ_RESERVED = 0, 1, 2, 3

PCAP_MAGICS = {
    b"\xd4\xc3\xb2\xa1",
    b"\xa1\xb2\xc3\xd4",
    b"\x4d\x3c\xb2\xa1",
    b"\xa1\xb2\x3c\x4d",
}
PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"

DLT_EN10MB = 1
DLT_RAW = {12, 14, 101}
DLT_IPV6 = 229


class LinkType(str, Enum):
    ETHERNET = "ethernet"
    RAW_IPV6 = "raw_ipv6"


@dataclass(frozen=True)
class MatterHeader:
    message_flags: int
    session_id: int
    security_flags: int
    message_counter: int
    source_node_id: Optional[int] = None
    dest_node_id: Optional[int] = None
    dest_id_width: int = 0
    warnings: tuple[str, ...] = ()

    @property
    def length(self) -> int:
        """Octets occupied by the header including node ids."""
        return MATTER_MIN_HEADER + (8 if self.source_node_id is not None else 0) + self.dest_id_width


def parse_matter_header(payload: bytes) -> MatterHeader:
    """Decode the unencrypted Matter message header at the start of ``payload``.

    Layout: flags(1) session_id(2, LE) security_flags(1) counter(4, LE),
    then an 8-octet source node id if the S flag is set, then a destination
    id whose width comes from the DSIZ bits (0, 8 or 2 octets).

    Raises:
        TooShort: fewer octets than the flags demand.
    """
    if len(payload) < MATTER_MIN_HEADER:
        raise TooShort(f"payload of {len(payload)} octets cannot hold a Matter header")
    flags, session_id, sec_flags, counter = struct.unpack_from("<BHBI", payload, 0)
    warnings = []
    if flags & FLAG_VERSION_MASK:
        warnings.append(f"MalformedFlags: reserved version bits set (0x{flags:02x})")

    offset = MATTER_MIN_HEADER
    source = None
    if flags & FLAG_S:
        if len(payload) < offset + 8:
            raise TooShort("source node id flagged but payload truncated")
        (source,) = struct.unpack_from("<Q", payload, offset)
        offset += 8

    dsiz = flags & FLAG_DSIZ_MASK
    dest = None
    width = 0
    if dsiz == DSIZ_NODE:
        width = 8
    elif dsiz == DSIZ_GROUP:
        width = 2
    elif dsiz == DSIZ_RESERVED:
        warnings.append("MalformedFlags: reserved DSIZ value 3")
    if width:
        if len(payload) < offset + width:
            raise TooShort("destination id flagged but payload truncated")
        (dest,) = struct.unpack_from("<Q" if width == 8 else "<H", payload, offset)

    return MatterHeader(
        message_flags=flags,
        session_id=session_id,
        security_flags=sec_flags,
        message_counter=counter,
        source_node_id=source,
        dest_node_id=dest,
        dest_id_width=width,
        warnings=tuple(warnings),
    )


class ParsedCapture(NamedTuple):
    records: list[PacketRecord]
    skipped: int


def _open_reader(fh: IO[bytes]):
    magic = fh.read(4)
    fh.seek(0)
    if magic in PCAP_MAGICS:
        return dpkt.pcap.Reader(fh)
    if magic == PCAPNG_MAGIC:
        return dpkt.pcapng.Reader(fh)
    raise UnreadableFile(f"not a PCAP or PCAPNG container (magic {magic.hex() or 'empty'})")


def _link_from_dlt(dlt: int) -> LinkType:
    if dlt == DLT_EN10MB:
        return LinkType.ETHERNET
    if dlt in DLT_RAW or dlt == DLT_IPV6:
        return LinkType.RAW_IPV6
    raise UnreadableFile(f"unsupported link type {dlt}")


def _mac(octets: bytes) -> str:
    return ":".join(f"{b:02x}" for b in octets)


def _ipv6_udp(frame: bytes, link: LinkType):
    """Return (ip6, udp, src_mac, dst_mac) or None when the frame is not UDP over IPv6."""
    src_mac = dst_mac = ""
    if link is LinkType.ETHERNET:
        eth = dpkt.ethernet.Ethernet(frame)
        if eth.type != dpkt.ethernet.ETH_TYPE_IP6:
            return None
        ip6 = eth.data
        src_mac, dst_mac = _mac(eth.src), _mac(eth.dst)
    else:
        if not frame or frame[0] >> 4 != 6:
            return None
        ip6 = dpkt.ip6.IP6(frame)
    if not isinstance(ip6, dpkt.ip6.IP6):
        return None
    udp = ip6.data
    if ip6.p != dpkt.ip.IP_PROTO_UDP or not isinstance(udp, dpkt.udp.UDP):
        return None
    return ip6, udp, src_mac, dst_mac


def parse_capture(
    path: str | Path,
    link_type: LinkType | str | None = None,
    *,
    len_offset: int = 0,
    keep_payload: bool = True,
) -> ParsedCapture:
    """Extract one :class:`PacketRecord` per Matter-over-UDP/IPv6 datagram.

    ``link_type`` defaults to the container's declared link type.
    ``len_offset`` is added to every ``payload_len`` for recalibrating against
    captures whose length convention differs; when it is non-zero the raw
    payload is dropped so the record stays self-consistent.

    Raises:
        UnreadableFile: the file cannot be read or is not a valid container.
    """
    path = Path(path)
    records: list[PacketRecord] = []
    skipped = 0
    try:
        with open(path, "rb") as fh:
            reader = _open_reader(fh)
            link = LinkType(link_type) if link_type is not None else _link_from_dlt(reader.datalink())
            for ts, frame in reader:
                try:
                    found = _ipv6_udp(bytes(frame), link)
                except (dpkt.UnpackError, dpkt.NeedData, ValueError, struct.error):
                    found = None
                if found is None:
                    skipped += 1
                    continue
                ip6, udp, src_mac, dst_mac = found
                data = bytes(udp.data)
                try:
                    header = parse_matter_header(data)
                except TooShort:
                    skipped += 1
                    continue
                for warning in header.warnings:
                    log.debug("%s @%.6f: %s", path.name, ts, warning)
                records.append(
                    PacketRecord(
                        timestamp=float(ts),
                        src_id=endpoint_id(ipaddress.IPv6Address(ip6.src).compressed, src_mac),
                        dst_id=endpoint_id(ipaddress.IPv6Address(ip6.dst).compressed, dst_mac),
                        src_port=udp.sport,
                        dst_port=udp.dport,
                        payload_len=len(data) + len_offset,
                        message_flags=header.message_flags,
                        security_flags=header.security_flags,
                        session_id=header.session_id,
                        message_counter=header.message_counter,
                        payload=data if keep_payload and len_offset == 0 else None,
                    )
                )
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    except (ValueError, dpkt.NeedData, dpkt.UnpackError, struct.error) as exc:
        raise UnreadableFile(f"{path}: malformed container: {exc}") from exc
    records.sort(key=lambda r: r.timestamp)
    if skipped:
        log.info("%s: %d records, %d non-Matter packets skipped", path.name, len(records), skipped)
    return ParsedCapture(records, skipped)


def dedup_retransmissions(records: Iterable[PacketRecord]) -> list[PacketRecord]:
    """Keep only the latest copy of each (source, destination, message counter)."""
    latest: dict[tuple[str, str, int], tuple[float, int]] = {}
    records = list(records)
    for idx, rec in enumerate(records):
        key = (rec.src_id, rec.dst_id, rec.message_counter)
        best = latest.get(key)
        if best is None or rec.timestamp >= best[0]:
            latest[key] = (rec.timestamp, idx)
    keep = sorted(idx for _, idx in latest.values())
    survivors = [records[i] for i in keep]
    survivors.sort(key=lambda r: r.timestamp)
    return survivors


# trace files

TRACE_FIELDS = (
    "timestamp",
    "src_id_pair",
    "dst_id_pair",
    "src_port",
    "dst_port",
    "payload_len",
    "message_flags",
    "security_flags",
    "session_id",
    "message_counter",
)


def record_to_row(rec: PacketRecord) -> dict:
    row = {
        "timestamp": rec.timestamp,
        "src_id_pair": rec.src_id,
        "dst_id_pair": rec.dst_id,
        "src_port": rec.src_port,
        "dst_port": rec.dst_port,
        "payload_len": rec.payload_len,
        "message_flags": rec.message_flags,
        "security_flags": rec.security_flags,
        "session_id": rec.session_id,
        "message_counter": rec.message_counter,
    }
    if rec.payload is not None:
        row["payload"] = rec.payload.hex()
    return row


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def row_to_record(row: dict, line: int | None = None) -> PacketRecord:
    if not isinstance(row, dict):
        raise SchemaViolation("expected a JSON object", line)
    missing = [f for f in TRACE_FIELDS if f not in row]
    if missing:
        raise SchemaViolation(f"missing field(s): {', '.join(missing)}", line)
    ts = row["timestamp"]
    if not isinstance(ts, (int, float)) or isinstance(ts, bool):
        raise SchemaViolation("timestamp must be a number", line)
    for key in ("src_id_pair", "dst_id_pair"):
        if not isinstance(row[key], str):
            raise SchemaViolation(f"{key} must be a string", line)
    for key in TRACE_FIELDS[3:]:
        if not _is_int(row[key]):
            raise SchemaViolation(f"{key} must be an integer", line)
    payload = row.get("payload")
    if payload is not None:
        if not isinstance(payload, str):
            raise SchemaViolation("payload must be a hex string", line)
        try:
            payload = bytes.fromhex(payload)
        except ValueError:
            raise SchemaViolation("payload is not valid hex", line) from None
    try:
        return PacketRecord(
            timestamp=float(ts),
            src_id=row["src_id_pair"],
            dst_id=row["dst_id_pair"],
            src_port=row["src_port"],
            dst_port=row["dst_port"],
            payload_len=row["payload_len"],
            message_flags=row["message_flags"],
            security_flags=row["security_flags"],
            session_id=row["session_id"],
            message_counter=row["message_counter"],
            payload=payload,
        )
    except ValueError as exc:
        raise SchemaViolation(str(exc), line) from exc


def iter_trace_rows(path: str | Path) -> Iterator[tuple[int, dict, PacketRecord]]:
    """Yield (line number, raw row, record) for each non-blank line of a trace."""
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                row = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc.msg}", lineno) from exc
            yield lineno, row, row_to_record(row, lineno)


def read_trace(path: str | Path) -> list[PacketRecord]:
    return [rec for _, _, rec in iter_trace_rows(path)]


def write_trace(records: Iterable[PacketRecord], path: str | Path, extra: Iterable[dict] | None = None) -> None:
    """Write records as line-delimited JSON.

    ``extra``, if given, is zipped with ``records`` and merged into each row
    (used for the ``label`` column of labeled traces).
    """
    with open(path, "w", encoding="utf-8") as fh:
        if extra is None:
            for rec in records:
                fh.write(json.dumps(record_to_row(rec)) + "\n")
        else:
            for rec, more in zip(records, extra, strict=True):
                fh.write(json.dumps({**record_to_row(rec), **more}) + "\n")
