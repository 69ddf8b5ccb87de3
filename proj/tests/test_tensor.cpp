#include <doctest.h>

#include "lodseg/tensor.hpp"

using namespace lodseg;

TEST_CASE("tensor layout is row major") {
    Tensor t({2, 3, 4});
    CHECK(t.numel() == 24);
    t.at3(1, 2, 3) = 5.0f;
    CHECK(t[1 * 12 + 2 * 4 + 3] == 5.0f);

    Tensor q({2, 2, 2, 2});
    q.at4(1, 0, 1, 0) = 7.0f;
    CHECK(q[8 + 0 + 2 + 0] == 7.0f);
}

TEST_CASE("invalid dimensions are rejected") {
    CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({-1}), ShapeError);
}

TEST_CASE("shape equality guard") {
    Tensor a({2, 2}), b({2, 2}), c({4});
    CHECK_NOTHROW(require_same_shape(a, b, "test"));
    CHECK_THROWS_AS(require_same_shape(a, c, "test"), ShapeError);
}
