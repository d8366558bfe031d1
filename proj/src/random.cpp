#include "lmabo/random.hpp"

#include <boost/random/sobol.hpp>

#include "lmabo/errors.hpp"

namespace lmabo {

Eigen::MatrixXd scrambled_sobol(Eigen::Index n, Eigen::Index dim, std::uint64_t seed) {
    if (dim < 1) throw ArgumentError("scrambled_sobol: dim must be >= 1");
    using Engine = boost::random::sobol_engine<std::uint32_t, 32, boost::random::default_sobol_table>;
    Engine engine(static_cast<std::size_t>(dim));
    Rng rng(seed);
    std::vector<std::uint32_t> shift(static_cast<std::size_t>(dim));
    for (auto& s : shift) s = static_cast<std::uint32_t>(rng() >> 32);

    Eigen::MatrixXd points(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) {
            const std::uint32_t v = engine() ^ shift[static_cast<std::size_t>(j)];
            points(i, j) = (static_cast<double>(v) + 0.5) * 0x1.0p-32;
        }
    }
    return points;
}

Eigen::MatrixXd uniform_points(Eigen::Index n, Eigen::Index dim, Rng& rng) {
    Eigen::MatrixXd points(n, dim);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < dim; ++j) points(i, j) = uniform01(rng);
    return points;
}

}  // namespace lmabo
