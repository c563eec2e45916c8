from saliency_prompt.rng import SplitMix64


def test_reference_vector():
    # published splitmix64 outputs for seed 0
    r = SplitMix64(0)
    assert [r.next_u64() for _ in range(3)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_uniform_and_below_ranges():
    r = SplitMix64(99)
    for _ in range(1000):
        assert 0.0 <= r.uniform() < 1.0
        assert 0 <= r.below(7) < 7
