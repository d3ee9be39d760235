import pytest
import torch
from torch.testing import assert_close

from indexnet.dataset import CalendarFields, index_proxy_features
from indexnet.embedding import (ChannelTable, IndexEmbedding, TimestampTables, build_tables, embedding_backward,
                                retrieve_channel, retrieve_timestamp)
from indexnet.errors import ConfigError
from indexnet.numeric import DTYPE


@pytest.mark.parametrize("freq,minute_rows", [(60, None), (15, 4), (10, 6), (5, 12)])
def test_table_shapes(freq, minute_rows):
    tables = TimestampTables(freq, 8, active_groups=('week', 'month'))
    assert tables.tables['hour'].shape == (24, 8)
    assert tables.tables['day_of_week'].shape == (7, 8)
    assert tables.tables['day_of_month'].shape == (31, 8)
    assert tables.tables['month'].shape == (12, 8)
    if minute_rows is None:
        assert 'minute' not in tables.tables
    else:
        assert tables.tables['minute'].shape == (minute_rows, 8)
    assert all(not t.any() for t in tables.tables.values())


def test_invalid_tables():
    with pytest.raises(ConfigError):
        TimestampTables(7, 8)
    with pytest.raises(ConfigError):
        TimestampTables(60, 8, active_groups=('year',))
    with pytest.raises(ConfigError):
        build_tables(60, 4, 2, 4, init_mode='xavier')


def test_retrieve_sums_rows():
    tables = TimestampTables(15, 2, active_groups=('week', 'month'))
    tables.tables['minute'][1] = torch.tensor([1., 0.], dtype=DTYPE)
    tables.tables['hour'][3] = torch.tensor([10., 0.], dtype=DTYPE)
    tables.tables['day_of_week'][4] = torch.tensor([100., 0.], dtype=DTYPE)
    tables.tables['day_of_month'][0] = torch.tensor([0., 1.], dtype=DTYPE)
    tables.tables['month'][6] = torch.tensor([0., 10.], dtype=DTYPE)
    e_w, e_m, source = retrieve_timestamp(tables, CalendarFields(1, 3, 4, 0, 6))
    assert_close(e_w, torch.tensor([111., 0.], dtype=DTYPE))
    assert_close(e_m, torch.tensor([0., 11.], dtype=DTYPE))
    assert source['hour'].tolist() == [3]


def test_inactive_month_group_is_zero():
    tables = TimestampTables(60, 2)
    tables.tables['month'].fill_(1.)
    _, e_m, source = retrieve_timestamp(tables, CalendarFields(0, 3, 4, 0, 6))
    assert not e_m.any()
    assert 'month' not in source
    assert 'timestamp.month' not in tables.parameters()


def test_month_unavailable_on_synthesized_calendar():
    tables = TimestampTables(60, 2, active_groups=('week', 'month'))
    with pytest.raises(ConfigError, match='month features unavailable'):
        retrieve_timestamp(tables, index_proxy_features(30))
    week_only = TimestampTables(60, 2)
    e_w, _, _ = retrieve_timestamp(week_only, index_proxy_features(30))
    assert e_w.shape == (2,)


def test_retrieve_channel():
    table = ChannelTable(3, 2)
    table.weight.copy_(torch.arange(6, dtype=DTYPE).reshape(3, 2))
    assert_close(retrieve_channel(table, 1), torch.tensor([0., 1.], dtype=DTYPE))
    assert_close(retrieve_channel(table, torch.tensor([3, 2])), table.weight[[2, 1]])
    for n in (0, 4):
        with pytest.raises(IndexError):
            retrieve_channel(table, n)


def test_backward_routes_to_source_rows():
    tables, channel_table = build_tables(60, 2, 3, 2)
    calendar = torch.tensor([[0, 5, 1, 0, 0], [0, 5, 2, 0, 0]])
    _, _, source = retrieve_timestamp(tables, calendar)
    source['identity'] = torch.tensor([2, 0])
    grad = torch.tensor([[1., 2.], [3., 4.]], dtype=DTYPE)
    embedding_backward(tables, channel_table, source, grad_e_w=grad, grad_identity=grad)
    assert_close(tables.grads['hour'][5], torch.tensor([4., 6.], dtype=DTYPE))
    assert_close(tables.grads['day_of_week'][1], torch.tensor([1., 2.], dtype=DTYPE))
    assert tables.grads['hour'][:5].abs().sum() == 0
    assert_close(channel_table.grad[2], torch.tensor([1., 2.], dtype=DTYPE))
    assert channel_table.grad[1].abs().sum() == 0


def test_random_init_timestamp_tables_only():
    generator = torch.Generator().manual_seed(0)
    tables, channel_table = build_tables(60, 16, 4, 16, init_mode='random', generator=generator)
    hour = tables.tables['hour']
    assert hour.any()
    assert abs(hour.std().item() - .02) < .01
    assert not channel_table.weight.any()


def test_index_embedding_facade():
    embedding = IndexEmbedding(60, 3, 2, 4)
    assert embedding.width == 7
    z = torch.randn(5, 6, dtype=DTYPE)
    calendar = torch.tensor([[0, h, 0, 0, 0] for h in range(5)])
    vectors = embedding.retrieve(calendar, torch.tensor([1, 2, 1, 2, 1]))
    out = embedding.concat(z, vectors)
    assert out.shape == (5, 13)
    assert_close(out[:, :6], z)
    assert not out[:, 6:].any()
    grad_z = embedding.backward(torch.ones(5, 13, dtype=DTYPE), vectors, d_model=6)
    assert grad_z.shape == (5, 6)
    grads = embedding.gradients()
    assert_close(grads['channel.identity'][0], torch.full((4,), 3., dtype=DTYPE))
    assert_close(grads['timestamp.day_of_week'][0], torch.full((3,), 5., dtype=DTYPE))
    embedding.zero_grads()
    assert all(not g.any() for g in embedding.gradients().values())


def test_index_embedding_state_dict():
    embedding = IndexEmbedding(15, 3, 2, 4, active_groups=('week', 'month'), init_mode='random',
                               generator=torch.Generator().manual_seed(0))
    embedding.channel_table.weight.fill_(.5)
    restored = IndexEmbedding.from_state_dict(embedding.state_dict())
    for name, p in embedding.parameters().items():
        assert torch.equal(restored.parameters()[name], p)
    assert restored.tables.active_groups == ('week', 'month')
