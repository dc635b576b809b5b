from catpose import parallelize


def _square(x):
    return x * x


def test_results_keep_input_order():
    items = list(range(50))
    expected = [x * x for x in items]
    assert parallelize(_square, items, max_workers=1,
                       progressbar=False) == expected
    assert parallelize(_square, items, max_workers=4,
                       progressbar=False) == expected
    assert parallelize(_square, iter(items), max_workers=3) == expected
