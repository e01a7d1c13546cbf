"""Tests for callback output plugin."""

import pytest
from collusion_lab.output.events import OutputEvent, OutputEventType
from collusion_lab.output.plugins.callback import CallbackPlugin, finding_record


def cycle_event(content: str = "Greedy prices cycle; excluded") -> OutputEvent:
    return OutputEvent(
        event_type=OutputEventType.PRICE_CYCLE,
        source="sim_0004",
        content=content,
    )


class TestCallbackPlugin:
    def test_plugin_name(self):
        plugin = CallbackPlugin(name="my_callback", callback=lambda e: None)
        assert plugin.name == "my_callback"

    @pytest.mark.asyncio
    async def test_calls_sync_callback(self):
        received = []

        def on_event(event: OutputEvent):
            received.append(event)

        plugin = CallbackPlugin(name="test", callback=on_event)
        await plugin.handle(cycle_event("Test"))

        assert len(received) == 1
        assert received[0].content == "Test"

    @pytest.mark.asyncio
    async def test_calls_async_callback(self):
        """Async callbacks are awaited."""
        received = []

        async def on_event(event: OutputEvent):
            received.append(event)

        plugin = CallbackPlugin(name="test", callback=on_event)
        await plugin.handle(cycle_event())

        assert len(received) == 1

    def test_can_filter_types(self):
        plugin = CallbackPlugin(
            name="test",
            callback=lambda e: None,
            handled_types={OutputEventType.CERTIFICATE},
        )
        assert plugin.handled_types == {OutputEventType.CERTIFICATE}

    @pytest.mark.asyncio
    async def test_on_start_callback(self):
        started = []
        plugin = CallbackPlugin(
            name="test",
            callback=lambda e: None,
            on_start=lambda: started.append(True),
        )
        await plugin.start()
        assert len(started) == 1

    @pytest.mark.asyncio
    async def test_on_stop_callback(self):
        stopped = []

        async def on_stop():
            stopped.append(True)

        plugin = CallbackPlugin(name="test", callback=lambda e: None, on_stop=on_stop)
        await plugin.stop()
        assert len(stopped) == 1

    def test_needs_a_callback(self):
        with pytest.raises(ValueError, match="needs a callback"):
            CallbackPlugin(name="empty")

    @pytest.mark.asyncio
    async def test_dispatch_by_type(self):
        cycles, certificates = [], []
        plugin = CallbackPlugin(
            name="dispatch",
            on_type={
                OutputEventType.PRICE_CYCLE: cycles.append,
                OutputEventType.CERTIFICATE: certificates.append,
            },
        )
        assert plugin.handled_types == {OutputEventType.PRICE_CYCLE, OutputEventType.CERTIFICATE}
        await plugin.handle(cycle_event())
        assert len(cycles) == 1
        assert certificates == []

    @pytest.mark.asyncio
    async def test_filters_sources(self):
        received = []
        plugin = CallbackPlugin(name="one_sim", callback=received.append, sources={"sim_0004"})
        await plugin.handle(cycle_event())
        await plugin.handle(OutputEvent(
            event_type=OutputEventType.PRICE_CYCLE, source="sim_0005", content="cycle"
        ))
        assert [e.source for e in received] == ["sim_0004"]

    @pytest.mark.asyncio
    async def test_recorder_collects_findings(self):
        plugin, findings = CallbackPlugin.recorder("findings")
        assert OutputEventType.ERROR in plugin.handled_types
        assert OutputEventType.SIMULATION_START not in plugin.handled_types
        await plugin.handle(cycle_event())
        assert finding_record(findings[0]) == {
            "type": "price_cycle",
            "source": "sim_0004",
            "content": "Greedy prices cycle; excluded",
        }
