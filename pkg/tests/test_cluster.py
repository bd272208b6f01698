import json

import pytest

from strategem.cluster import GIB, Cluster, Device, parse_cluster, uniform_cluster
from strategem.errors import ValidationError


def test_uniform_cluster_units():
    c = uniform_cluster(8, 32, 15, 25, 5)
    assert c.k == 8
    assert all(d.mem_capacity == 32 * 2**30 for d in c.devices)
    assert c.link_bandwidth == 25e9
    assert c.link_latency == pytest.approx(5e-6)
    assert c.throughput == 15e12
    assert c.homogeneous


def test_single_device():
    assert uniform_cluster(1).k == 1


@pytest.mark.parametrize("k", [0, -1, 2.5, True])
def test_bad_k(k):
    with pytest.raises(ValidationError):
        uniform_cluster(k)


@pytest.mark.parametrize("kwargs", [{"mem_gb": 0}, {"throughput_tflops": -1}, {"bandwidth_gbps": 0},
                                    {"latency_us": -1}])
def test_bad_magnitudes(kwargs):
    with pytest.raises(ValidationError):
        uniform_cluster(2, **kwargs)


def test_zero_latency_allowed():
    assert uniform_cluster(2, latency_us=0).link_latency == 0


def test_parse_inline_and_file(tmp_path):
    c = parse_cluster("k=4,mem=16,tflops=10,bw=50,lat=2")
    assert c.k == 4 and c.min_mem == 16 * GIB and c.link_bandwidth == 50e9
    path = tmp_path / "c.json"
    path.write_text(json.dumps(c.to_dict()))
    assert parse_cluster(f"file:{path}") == c
    with pytest.raises(ValidationError):
        parse_cluster("k=4,speed=3")
    with pytest.raises(ValidationError):
        parse_cluster({"k": 2, "nics": 4})


def test_with_k_keeps_device_type():
    c = uniform_cluster(8, 16, 7, 3, 1).with_k(2)
    assert c.k == 2 and c.min_mem == 16 * GIB and c.link_bandwidth == 3e9


def test_heterogeneous_detected():
    c = Cluster((Device(0, GIB, 1e12), Device(1, 2 * GIB, 1e12)), 1e9, 0.0)
    assert not c.homogeneous
