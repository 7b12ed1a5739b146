"""CLI entry point for soas."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import comm
from .config import load_settings
from .errors import NoAgentsResponded, SoasError
from .logs import configure_logging
from .personal_agent import Broker, PersonalAgent
from .render import FORMATS
from .sim_agents import ScriptedBehavior, load_knowledge_base, serve
from .utils import format_endpoint, format_ts_ms, parse_endpoint

# Colors
DIM = "bright_black"
OK = "green"
FAILED = "red"


def _fail(e: SoasError):
    click.echo(f"Error: {e}", err=True)
    if isinstance(e, NoAgentsResponded):
        for agent_id, outcome in sorted(e.outcomes.items()):
            click.echo(f"  {agent_id}: {click.style(outcome, fg=FAILED)}", err=True)
    sys.exit(e.exit_code)


def config_option(fn):
    """Decorator adding --config to a command."""
    return click.option(
        "--config", "config_path", default=None, type=click.Path(dir_okay=False),
        help="Config file (key=value). Defaults to $SOAS_CONFIG.",
    )(fn)


def _parse_where(ctx, param, values):
    pairs = []
    for value in values:
        key, sep, val = value.partition("=")
        if not sep or not key.strip():
            raise click.BadParameter(f"{value!r} is not key=value")
        key, val = key.strip().lower(), val.strip()
        if key == "limit" and not (val.isdigit() and int(val) > 0):
            raise click.BadParameter("limit must be a positive integer")
        pairs.append((key, val))
    return tuple(pairs)


class SoasGroup(click.Group):
    """Click group whose usage errors exit 1; exit 2 means an empty request."""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            e.exit_code = 1
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = 1
            raise


@click.group(cls=SoasGroup)
@click.option("--log-level", default="WARNING", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              help="Diagnostics written to stderr.")
def cli(log_level: str):
    """Semantic agent-based search broker."""
    configure_logging(log_level)


# --- query ---


@cli.command("query")
@click.argument("text")
@click.option("--format", "fmt", default=None, type=click.Choice(FORMATS),
              help="Output format (default from pa.format).")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Write output to a file.")
@click.option("--where", multiple=True, callback=_parse_where,
              help="Constraint key=value; limit=N caps the result list.")
@config_option
def query_cmd(text: str, fmt: str | None, out: str | None, where: tuple, config_path: str | None):
    """Answer a full-text request from the located domain agents."""
    try:
        settings = load_settings(config_path)
        with Broker(settings) as broker:
            output, _report = PersonalAgent(broker).handle_request(text, fmt, where)
    except SoasError as e:
        _fail(e)
        return
    if out:
        try:
            Path(out).write_text(output.content, encoding="utf-8")
        except OSError as e:
            click.echo(f"Error: cannot write {out}: {e}", err=True)
            sys.exit(1)
        return
    click.echo(output.content, nl=False)


# --- registry ---


@cli.group()
def registry():
    """Inspect the Agent Locator."""


@registry.command("list")
@click.option("--ping", is_flag=True, help="Check each agent with PING.")
@config_option
def registry_list(ping: bool, config_path: str | None):
    """List registered agents (harness agents plus any that heartbeat in)."""
    try:
        settings = load_settings(config_path)
        with Broker(settings) as broker:
            rows = broker.registry.snapshot()
            reachable = {a.agent_id: comm.ping_agent(a.endpoint) for a in rows} if ping else {}
    except SoasError as e:
        _fail(e)
        return
    if not rows:
        click.echo("No agents registered.")
        return
    id_width = max(len(a.agent_id) for a in rows)
    domain_width = max(len(a.domain) for a in rows)
    for a in rows:
        id_col = click.style(a.agent_id.ljust(id_width), bold=True)
        extras = [
            a.domain.ljust(domain_width),
            a.endpoint,
            click.style(",".join(sorted(a.capabilities)), fg=DIM),
            click.style(format_ts_ms(a.last_seen), fg=DIM),
        ]
        if ping:
            up = reachable.get(a.agent_id, False)
            extras.append(click.style("up" if up else "down", fg=OK if up else FAILED))
        click.echo(f"{id_col}  " + "  ".join(extras))


# --- agent ---


@cli.group()
def agent():
    """Run simulated domain agents."""


@agent.command("run")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Knowledge base file (subject<TAB>predicate<TAB>object).")
@click.option("--domain", required=True, help="Domain tag the agent serves.")
@click.option("--port", required=True, type=click.IntRange(0, 65535), help="Port to listen on.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--agent-id", default=None, help="Defaults to <domain>-<port>.")
@click.option("--registry", "registry_endpoint", default=None,
              help="Registry host:port (default registry.endpoint).")
@click.option("--behavior", default="normal", type=click.Choice(ScriptedBehavior.MODES),
              help="Scripted fault for harness tests.")
@click.option("--delay-ms", default=0, type=click.IntRange(0), help="Delay used by --behavior delay.")
@config_option
def agent_run(kb_path: str, domain: str, port: int, host: str, agent_id: str | None,
              registry_endpoint: str | None, behavior: str, delay_ms: int, config_path: str | None):
    """Serve a knowledge base until interrupted."""
    try:
        settings = load_settings(config_path)
        kb = load_knowledge_base(kb_path)
        registry_endpoint = registry_endpoint or settings.registry_endpoint
        try:
            if parse_endpoint(registry_endpoint)[1] == 0:
                registry_endpoint = None
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="--registry") from None
        running = serve(
            kb, format_endpoint(host, port), registry_endpoint, domain.lower(),
            ScriptedBehavior(behavior, delay_ms), agent_id=agent_id,
            capabilities=settings.agent_capabilities, heartbeat_ms=settings.agent_heartbeat_ms,
            require_registration=False, max_frame_bytes=settings.comm_max_frame_bytes,
        )
    except SoasError as e:
        _fail(e)
        return
    target = registry_endpoint or click.style("no registry", fg=DIM)
    click.echo(f"Agent {click.style(running.agent_id, bold=True)} serving {len(kb)} triples "
               f"on {running.endpoint} (registry: {target}).")
    try:
        running.wait()
    except KeyboardInterrupt:
        pass
    finally:
        running.stop()
