"""Retry loop shared by the remote clients."""

from __future__ import annotations

import logging
import time
from typing import Callable, Optional

import requests

log = logging.getLogger(__name__)

RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


def _retry_after(resp: requests.Response) -> Optional[float]:
    value = resp.headers.get("Retry-After")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


def send_with_retry(
    send: Callable[[], requests.Response],
    retries: int = 3,
    base_delay: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> requests.Response:
    """Call ``send`` until it returns a non-retryable response.

    Retries on 429/5xx and on transport errors with delays of
    ``base_delay * 2**k`` (0.5 s, 1 s, 2 s by default), honoring a larger
    ``Retry-After``.  After the last retry the final response is returned, or
    the final transport exception re-raised.
    """
    for attempt in range(retries + 1):
        last = attempt == retries
        try:
            resp = send()
        except requests.RequestException as exc:
            if last:
                raise
            log.warning("request failed (%s), retrying", exc)
            sleep(base_delay * 2**attempt)
            continue
        if resp.status_code not in RETRY_STATUSES or last:
            return resp
        delay = base_delay * 2**attempt
        hinted = _retry_after(resp)
        if hinted is not None:
            delay = max(delay, hinted)
        log.warning("HTTP %s, retrying in %.1fs", resp.status_code, delay)
        sleep(delay)
    raise AssertionError("unreachable")
