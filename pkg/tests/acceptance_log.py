"""Collects one verdict line per acceptance criterion for the terminal summary."""
LINES = []


def verdict(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    LINES.append(line)
    return ok
