// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <boost/math/distributions/chi_squared.hpp>

namespace bugprio::testing {

using ad::Graph;
using ad::Var;

Tensor<double> random_tensor(const Shape& shape, Rng& rng, double scale) {
    Tensor<double> t(shape);
    for (double& v : t.values()) {
        v = scale * rng.normal();
    }
    return t;
}

Tensor<double> away_from_zero(const Shape& shape, Rng& rng) {
    Tensor<double> t(shape);
    for (double& v : t.values()) {
        const double mag = 0.1 + rng.uniform();
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

Var<double> readout(Var<double> y, std::uint64_t seed) {
    Rng rng(seed);
    Var<double> r = y.graph->constant(random_tensor(y.shape(), rng));
    return ad::sum(ad::mul(y, r));
}

namespace {

using Fn = std::function<Var<double>(Graph<double>&, Var<double>)>;

struct Case {
    std::string name;
    Shape shape;
    std::function<Fn(Rng&)> make;  // builds f with its constant operands drawn from rng
    bool relu_point = false;
};

}  // namespace

std::vector<GradResult> check_primitives(std::size_t points, std::uint64_t seed) {
    const std::uint64_t ro = seed ^ 0x5eed;
    auto c = [](Graph<double>& g, const Tensor<double>& t) { return g.constant(t); };
    std::vector<Case> cases;
    cases.push_back({"matmul(a)", {3, 4}, [&](Rng& r) -> Fn {
                         auto b = random_tensor({4, 2}, r);
                         return [=](Graph<double>& g, Var<double> x) { return readout(ad::matmul(x, c(g, b)), ro); };
                     }});
    cases.push_back({"matmul(b)", {4, 2}, [&](Rng& r) -> Fn {
                         auto a = random_tensor({3, 4}, r);
                         return [=](Graph<double>& g, Var<double> x) { return readout(ad::matmul(c(g, a), x), ro); };
                     }});
    cases.push_back({"matmul_nt(a)", {3, 4}, [&](Rng& r) -> Fn {
                         auto b = random_tensor({5, 4}, r);
                         return [=](Graph<double>& g, Var<double> x) { return readout(ad::matmul_nt(x, c(g, b)), ro); };
                     }});
    cases.push_back({"matmul_nt(b)", {5, 4}, [&](Rng& r) -> Fn {
                         auto a = random_tensor({3, 4}, r);
                         return [=](Graph<double>& g, Var<double> x) { return readout(ad::matmul_nt(c(g, a), x), ro); };
                     }});
    cases.push_back({"add", {3, 4}, [&](Rng& r) -> Fn {
                         auto b = random_tensor({3, 4}, r);
                         return [=](Graph<double>& g, Var<double> x) {
                             return readout(ad::add(x, ad::mul(x, c(g, b))), ro);
                         };
                     }});
    cases.push_back({"add_row(a)", {3, 4}, [&](Rng& r) -> Fn {
                         auto row = random_tensor({4}, r);
                         return [=](Graph<double>& g, Var<double> x) { return readout(ad::add_row(x, c(g, row)), ro); };
                     }});
    cases.push_back({"add_row(row)", {4}, [&](Rng& r) -> Fn {
                         auto a = random_tensor({3, 4}, r);
                         return [=](Graph<double>& g, Var<double> x) { return readout(ad::add_row(c(g, a), x), ro); };
                     }});
    cases.push_back({"mul", {3, 4}, [&](Rng& r) -> Fn {
                         auto b = random_tensor({3, 4}, r);
                         return [=](Graph<double>& g, Var<double> x) { return readout(ad::mul(x, c(g, b)), ro); };
                     }});
    cases.push_back({"mul(x,x)", {3, 4}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) { return readout(ad::mul(x, x), ro); };
                     }});
    cases.push_back({"scale", {3, 4}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) { return readout(ad::scale(x, -1.7), ro); };
                     }});
    cases.push_back({"relu", {3, 4}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) { return readout(ad::relu(x), ro); };
                     }, true});
    cases.push_back({"sum", {3, 4}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) { return ad::scale(ad::sum(x), 0.7); };
                     }});
    cases.push_back({"softmax_rows", {3, 5}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) { return readout(ad::softmax_rows(x), ro); };
                     }});
    cases.push_back({"softmax_rows(masked)", {3, 5}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) {
                             static const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0};
                             return readout(ad::softmax_rows(x, std::span<const std::uint8_t>(mask)), ro);
                         };
                     }});
    cases.push_back({"layer_norm(x)", {3, 6}, [&](Rng& r) -> Fn {
                         auto gain = random_tensor({6}, r), bias = random_tensor({6}, r);
                         return [=](Graph<double>& g, Var<double> x) {
                             return readout(ad::layer_norm(x, c(g, gain), c(g, bias), 1e-5), ro);
                         };
                     }});
    cases.push_back({"layer_norm(gain)", {6}, [&](Rng& r) -> Fn {
                         auto xs = random_tensor({3, 6}, r), bias = random_tensor({6}, r);
                         return [=](Graph<double>& g, Var<double> x) {
                             return readout(ad::layer_norm(c(g, xs), x, c(g, bias), 1e-5), ro);
                         };
                     }});
    cases.push_back({"layer_norm(bias)", {6}, [&](Rng& r) -> Fn {
                         auto xs = random_tensor({3, 6}, r), gain = random_tensor({6}, r);
                         return [=](Graph<double>& g, Var<double> x) {
                             return readout(ad::layer_norm(c(g, xs), c(g, gain), x, 1e-5), ro);
                         };
                     }});
    cases.push_back({"embedding", {7, 3}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) {
                             static const std::vector<std::int32_t> ids = {2, 0, 2, 6, 5};
                             return readout(ad::embedding(x, std::span<const std::int32_t>(ids)), ro);
                         };
                     }});
    cases.push_back({"masked_mean_rows", {4, 3}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) {
                             static const std::vector<std::uint8_t> mask = {1, 0, 1, 1};
                             return readout(ad::masked_mean_rows(x, std::span<const std::uint8_t>(mask)), ro);
                         };
                     }});
    cases.push_back({"concat_cols", {3, 2}, [&](Rng& r) -> Fn {
                         auto other = random_tensor({3, 3}, r);
                         return [=](Graph<double>& g, Var<double> x) {
                             std::vector<Var<double>> parts = {c(g, other), x, ad::scale(x, 2.0)};
                             return readout(ad::concat_cols(std::span<const Var<double>>(parts)), ro);
                         };
                     }});
    cases.push_back({"slice_cols", {3, 5}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) { return readout(ad::slice_cols(x, 1, 3), ro); };
                     }});
    cases.push_back({"concat_rows", {2, 3}, [&](Rng& r) -> Fn {
                         auto other = random_tensor({1, 3}, r);
                         return [=](Graph<double>& g, Var<double> x) {
                             std::vector<Var<double>> parts = {x, c(g, other), x};
                             return readout(ad::concat_rows(std::span<const Var<double>>(parts)), ro);
                         };
                     }});
    cases.push_back({"gather_rows", {4, 3}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) {
                             static const std::vector<std::size_t> rows = {3, 1, 3};
                             return readout(ad::gather_rows(x, std::span<const std::size_t>(rows)), ro);
                         };
                     }});
    cases.push_back({"cross_entropy", {4, 5}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) {
                             static const std::vector<std::int64_t> t = {2, ad::kIgnoreIndex, 0, 4};
                             return ad::cross_entropy(x, std::span<const std::int64_t>(t));
                         };
                     }});
    cases.push_back({"dropout", {3, 4}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) {
                             Rng mask_rng(ro + 1);
                             return readout(ad::dropout(x, 0.3, mask_rng), ro);
                         };
                     }});
    cases.push_back({"l2_normalize_rows", {3, 4}, [&](Rng&) -> Fn {
                         return [=](Graph<double>&, Var<double> x) { return readout(ad::l2_normalize_rows(x), ro); };
                     }});

    Rng rng(seed);
    std::vector<GradResult> out;
    for (const Case& k : cases) {
        GradResult res{k.name, 0.0};
        for (std::size_t p = 0; p < points; ++p) {
            const Fn f = k.make(rng);
            const Tensor<double> point = k.relu_point ? away_from_zero(k.shape, rng) : random_tensor(k.shape, rng);
            res.worst = std::max(res.worst, ad::grad_check(f, point));
        }
        out.push_back(res);
    }
    return out;
}

double check_encoder(const EncoderConfig& config, std::size_t points, std::size_t coords, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t p = 0; p < points; ++p) {
        EncoderParams<double> params = EncoderParams<double>::init(config, rng);
        std::vector<ad::Parameter<double>*> ps;
        for (auto& [name, param] : params.named_parameters()) {
            // Wider than the 0.02 init so every sublayer carries signal.
            for (double& v : param->value.values()) {
                v += 0.3 * rng.normal();
            }
            ps.push_back(param);
        }
        const std::size_t content = 3 + rng.index(config.max_len - 5);
        std::vector<TokenId> ids(content);
        for (TokenId& id : ids) {
            id = static_cast<TokenId>(rng.index(config.vocab_size));
        }
        const TokenSequence seq = frame(ids, config.max_len);
        const std::uint64_t dropout_seed = rng.next(), readout_seed = rng.next();
        auto loss = [&](Graph<double>& g) {
            Rng drop(dropout_seed);
            ForwardOptions opts{Mode::train, &drop};
            Var<double> out = encode(g, params, seq, opts);
            std::vector<std::size_t> rows(seq.length);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                rows[i] = i;
            }
            return readout(ad::gather_rows(out, std::span<const std::size_t>(rows)), readout_seed);
        };
        worst = std::max(worst,
                         ad::grad_check_params(loss, std::span<ad::Parameter<double>* const>(ps), 1e-5, coords, rng));
    }
    return worst;
}

OracleMetrics oracle_metrics(const std::vector<int>& gold, const std::vector<int>& pred) {
    OracleMetrics m;
    const std::size_t n = gold.size();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (gold[i] == pred[i]) {
            ++correct;
        }
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    for (int c = 0; c < static_cast<int>(kNumPriorities); ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            tp += gold[i] == c && pred[i] == c;
            fp += gold[i] != c && pred[i] == c;
            fn += gold[i] == c && pred[i] != c;
        }
        const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
        const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
        const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        m.precision[c] = p;
        m.recall[c] = r;
        m.f1[c] = f;
        m.support[c] = tp + fn;
        const double w = double(tp + fn) / double(n);
        m.weighted_precision += w * p;
        m.weighted_recall += w * r;
        m.weighted_f1 += w * f;
    }
    return m;
}

double oracle_cl_loss(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& p,
                      double tau) {
    auto cosine = [](const std::vector<double>& x, const std::vector<double>& y) {
        double xy = 0, xx = 0, yy = 0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            xy += x[k] * y[k];
            xx += x[k] * x[k];
            yy += y[k] * y[k];
        }
        return xy / (std::sqrt(xx) * std::sqrt(yy));
    };
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            denom += std::exp(cosine(a[i], p[j]) / tau);
        }
        total += -std::log(std::exp(cosine(a[i], p[i]) / tau) / denom);
    }
    return total / static_cast<double>(a.size());
}

std::string random_utf8(Rng& rng, std::size_t max_units) {
    static const std::vector<std::string> words = {"assertTrue", "NetBeans", "null", "NPE", "foo_bar", "0x7f", "i++",
                                                   "FileNotFoundException", "simpleconfigurator", "build", "42"};
    static const std::string punct = "{}()[];:.,<>=+-*/\\\"'`!?@#$%^&|~";
    static const std::vector<std::string> multi = {"é", "ß", "Ж", "中", "文", "€", "→", "😀", "🐛", "𝔘", " ",
                                                   "ü", "ñ", "日本", "한"};
    std::string out;
    const std::size_t units = rng.index(max_units + 1);
    for (std::size_t u = 0; u < units; ++u) {
        switch (rng.index(6)) {
            case 0:
                out += words[rng.index(words.size())];
                break;
            case 1:
                out += punct[rng.index(punct.size())];
                break;
            case 2:
                out += multi[rng.index(multi.size())];
                break;
            case 3: {
                static const char* ws[] = {" ", " ", "  ", "\t", "\n", "\r\n"};
                out += ws[rng.index(6)];
                break;
            }
            case 4: {
                // Any valid code point, encoded by hand.
                std::uint32_t cp = 0;
                do {
                    cp = static_cast<std::uint32_t>(1 + rng.index(0x10FFFF));
                } while (cp >= 0xD800 && cp <= 0xDFFF);
                if (cp < 0x80) {
                    out += static_cast<char>(cp);
                } else if (cp < 0x800) {
                    out += static_cast<char>(0xC0 | (cp >> 6));
                    out += static_cast<char>(0x80 | (cp & 0x3F));
                } else if (cp < 0x10000) {
                    out += static_cast<char>(0xE0 | (cp >> 12));
                    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
                    out += static_cast<char>(0x80 | (cp & 0x3F));
                } else {
                    out += static_cast<char>(0xF0 | (cp >> 18));
                    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
                    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
                    out += static_cast<char>(0x80 | (cp & 0x3F));
                }
                break;
            }
            default:
                out += static_cast<char>('a' + rng.index(26));
                break;
        }
    }
    return out;
}

double chi_square_p_value(double statistic, double dof) {
    const boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, statistic));
}

}  // namespace bugprio::testing
