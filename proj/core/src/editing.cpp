#include "hdae/editing.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace hdae {

namespace {

uint64_t fnv1a(const double* p, int64_t n) {
    uint64_t h = 1469598103934665603ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (int64_t i = 0; i < n * static_cast<int64_t>(sizeof(double)); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

struct FitResult {
    torch::Tensor w;
    double bias = 0.0;
    double accuracy = 0.0;
};

// Rows are assigned to the holdout by hashing split_key (defaults to the
// features), so probes over masked features share one split.
FitResult fit_logistic(const torch::Tensor& features, const std::vector<int>& labels, const ClassifierOptions& opts,
                       const torch::Tensor& split_key = {}) {
    const auto N = features.size(0);
    if (static_cast<int64_t>(labels.size()) != N) {
        throw std::invalid_argument("classifier: label count does not match code count");
    }
    int64_t pos = 0;
    for (int v : labels) {
        if (v != 0 && v != 1) {
            throw std::invalid_argument("classifier: labels must be 0 or 1");
        }
        pos += v;
    }
    if (pos < 2 || N - pos < 2) {
        throw std::invalid_argument("classifier: need at least two examples of each class");
    }

    auto X = features.to(torch::kFloat64).contiguous();
    const auto D = X.size(1);
    auto K = split_key.defined() ? split_key.to(torch::kFloat64).contiguous() : X;
    std::vector<int64_t> train_idx, test_idx;
    const auto cut = static_cast<uint64_t>(opts.holdout_fraction * 1000.0);
    for (int64_t i = 0; i < N; ++i) {
        const auto h = fnv1a(K[i].data_ptr<double>(), K.size(1)) ^ static_cast<uint64_t>(labels[static_cast<size_t>(i)]);
        ((h % 1000) < cut ? test_idx : train_idx).push_back(i);
    }
    if (train_idx.empty()) {
        train_idx = test_idx;
    }
    if (test_idx.empty()) {
        test_idx = train_idx;
    }
    auto y_all = torch::tensor(std::vector<double>(labels.begin(), labels.end()), torch::kFloat64);
    auto tr = torch::tensor(train_idx, torch::kLong);
    auto Xtr = X.index_select(0, tr);
    auto ytr = y_all.index_select(0, tr);

    auto w = torch::zeros({D}, torch::kFloat64).set_requires_grad(true);
    auto b = torch::zeros({1}, torch::kFloat64).set_requires_grad(true);
    torch::optim::LBFGS optim({w, b}, torch::optim::LBFGSOptions(1.0)
                                          .max_iter(opts.max_iterations)
                                          .tolerance_grad(1e-10)
                                          .tolerance_change(1e-14)
                                          .history_size(20)
                                          .line_search_fn("strong_wolfe"));
    auto closure = [&]() {
        optim.zero_grad();
        auto logits = torch::mv(Xtr, w) + b;
        auto loss = torch::binary_cross_entropy_with_logits(logits, ytr) + 0.5 * opts.l2 * w.dot(w);
        loss.backward();
        return loss;
    };
    optim.step(closure);

    FitResult r;
    r.w = w.detach().clone();
    r.bias = b.detach().item<double>();
    torch::NoGradGuard no_grad;
    auto te = torch::tensor(test_idx, torch::kLong);
    auto pred = (torch::mv(X.index_select(0, te), r.w) + r.bias) > 0;
    auto truth = y_all.index_select(0, te) > 0.5;
    r.accuracy = (pred == truth).to(torch::kFloat64).mean().item<double>();
    return r;
}

} // namespace

torch::Tensor flatten_codes(const HierarchicalCode& codes) { return codes.flat().to(torch::kFloat64); }

AttributeDirection train_classifier(const HierarchicalCode& codes, const std::vector<int>& labels,
                                    const std::string& name, const ClassifierOptions& opts) {
    const auto fit = fit_logistic(flatten_codes(codes), labels, opts);
    AttributeDirection dir;
    dir.name = name;
    dir.n.assign(fit.w.data_ptr<double>(), fit.w.data_ptr<double>() + fit.w.numel());
    dir.bias = fit.bias;
    dir.levels = codes.num_levels();
    dir.dim = codes.dim();
    dir.train_accuracy = fit.accuracy;
    dir.n_hat = normalize_direction(dir.n);
    return dir;
}

std::vector<double> normalize_direction(std::span<const double> n) {
    if (n.empty()) {
        throw std::invalid_argument("normalize_direction: empty vector");
    }
    double lo = std::abs(n[0]), hi = lo;
    for (double v : n) {
        lo = std::min(lo, std::abs(v));
        hi = std::max(hi, std::abs(v));
    }
    std::vector<double> out(n.size(), 0.0);
    if (hi == lo) {
        return out;
    }
    const double range = hi - lo;
    for (size_t i = 0; i < n.size(); ++i) {
        out[i] = (std::abs(n[i]) - lo) / range;
    }
    return out;
}

TruncatedDirection truncate_direction(const AttributeDirection& dir, int64_t k) {
    const auto D = dir.size();
    if (k < 0 || k > D) {
        throw std::invalid_argument("truncate_direction: k must lie in [0, L*d]");
    }
    const auto n_hat = dir.n_hat.size() == dir.n.size() ? dir.n_hat : normalize_direction(dir.n);
    std::vector<int64_t> order(static_cast<size_t>(D));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return n_hat[static_cast<size_t>(a)] > n_hat[static_cast<size_t>(b)];
    });
    TruncatedDirection out;
    out.base = dir;
    out.base.n_hat = n_hat;
    out.k = k;
    out.n_prime.assign(static_cast<size_t>(D), 0.0);
    out.support.assign(order.begin(), order.begin() + k);
    std::sort(out.support.begin(), out.support.end());
    for (auto i : out.support) {
        out.n_prime[static_cast<size_t>(i)] = dir.n[static_cast<size_t>(i)];
    }
    return out;
}

HierarchicalCode manipulate(const HierarchicalCode& code, const TruncatedDirection& dir, double alpha) {
    if (code.flat_size() != static_cast<int64_t>(dir.n_prime.size())) {
        throw std::invalid_argument("manipulate: direction length does not match the code");
    }
    double norm2 = 0.0;
    for (double v : dir.n_prime) {
        norm2 += v * v;
    }
    if (norm2 == 0.0 || alpha == 0.0) {
        return code.clone();
    }
    auto step = torch::tensor(dir.n_prime, torch::kFloat64) * (alpha / std::sqrt(norm2));
    auto flat = code.flat().to(torch::kFloat64) + step.unsqueeze(0);
    return HierarchicalCode::from_flat(flat.to(code.tensor().scalar_type()), code.num_levels(), code.dim());
}

std::vector<double> attribute_logits(const AttributeDirection& dir, const HierarchicalCode& code) {
    if (code.flat_size() != dir.size()) {
        throw std::invalid_argument("attribute_logits: direction length does not match the code");
    }
    auto logits = (torch::mv(flatten_codes(code), torch::tensor(dir.n, torch::kFloat64)) + dir.bias).contiguous();
    return {logits.data_ptr<double>(), logits.data_ptr<double>() + logits.numel()};
}

LevelAttribution level_attribution(const AttributeDirection& dir) {
    const auto n_hat = dir.n_hat.size() == dir.n.size() ? dir.n_hat : normalize_direction(dir.n);
    if (dir.levels < 1 || dir.levels * dir.dim != static_cast<int64_t>(n_hat.size())) {
        throw std::invalid_argument("level_attribution: direction shape inconsistent with L*d");
    }
    LevelAttribution out;
    out.mass.assign(static_cast<size_t>(dir.levels), 0.0);
    double total = 0.0;
    for (int64_t l = 0; l < dir.levels; ++l) {
        for (int64_t j = 0; j < dir.dim; ++j) {
            out.mass[static_cast<size_t>(l)] += n_hat[static_cast<size_t>(l * dir.dim + j)];
        }
        total += out.mass[static_cast<size_t>(l)];
    }
    if (total > 0.0) {
        for (auto& m : out.mass) {
            m /= total;
        }
    }
    out.argmax = std::max_element(out.mass.begin(), out.mass.end()) - out.mass.begin();
    return out;
}

std::vector<std::pair<double, double>> ecdf(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("ecdf: empty input");
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::pair<double, double>> out;
    const double n = static_cast<double>(sorted.size());
    for (size_t i = 0; i < sorted.size(); ++i) {
        if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) {
            continue;
        }
        out.emplace_back(sorted[i], static_cast<double>(i + 1) / n);
    }
    return out;
}

double fidelity(const torch::Tensor& original, const torch::Tensor& edited, const torch::Tensor& mask) {
    if (!original.sizes().equals(edited.sizes())) {
        throw std::invalid_argument("fidelity: image shapes differ");
    }
    auto keep = (1.0 - mask.to(torch::kFloat64)).expand_as(original);
    const double count = keep.sum().item<double>();
    if (count == 0.0) {
        return 0.0;
    }
    auto diff = (original.to(torch::kFloat64) - edited.to(torch::kFloat64)).pow(2) * keep;
    return diff.sum().item<double>() / count;
}

double linear_probe(const HierarchicalCode& codes, const std::vector<int>& labels,
                    const std::vector<int64_t>& level_subset, const ClassifierOptions& opts) {
    auto masked = codes.tensor().to(torch::kFloat64).clone();
    auto keep = torch::zeros({codes.num_levels()}, torch::kFloat64);
    for (auto l : level_subset) {
        if (l < 0 || l >= codes.num_levels()) {
            throw std::invalid_argument("linear_probe: level index out of range");
        }
        keep[l] = 1.0;
    }
    masked.mul_(keep.view({1, -1, 1}));
    return fit_logistic(masked.reshape({codes.batch(), -1}), labels, opts, flatten_codes(codes)).accuracy;
}

void save_registry(const std::filesystem::path& path, const std::vector<AttributeDirection>& dirs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : dirs) {
        arr.push_back({{"name", d.name},
                       {"n", d.n},
                       {"bias", d.bias},
                       {"L", d.levels},
                       {"d", d.dim},
                       {"train_accuracy", d.train_accuracy}});
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << arr.dump(1) << '\n';
}

std::vector<AttributeDirection> load_registry(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read registry " + path.string());
    }
    const auto arr = nlohmann::json::parse(in);
    std::vector<AttributeDirection> dirs;
    for (const auto& j : arr) {
        AttributeDirection d;
        d.name = j.at("name").get<std::string>();
        d.n = j.at("n").get<std::vector<double>>();
        d.bias = j.value("bias", 0.0);
        d.levels = j.at("L").get<int64_t>();
        d.dim = j.at("d").get<int64_t>();
        d.train_accuracy = j.value("train_accuracy", 0.0);
        if (d.levels * d.dim != d.size() || d.n.empty()) {
            throw std::runtime_error("registry entry '" + d.name + "' has inconsistent L, d and n");
        }
        for (double v : d.n) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("registry entry '" + d.name + "' has non-finite weights");
            }
        }
        d.n_hat = normalize_direction(d.n);
        dirs.push_back(std::move(d));
    }
    return dirs;
}

void write_heatmap_csv(const std::filesystem::path& path, const std::vector<AttributeDirection>& dirs) {
    std::ofstream out(path);
    out << "attribute,level,slot,n_hat\n";
    for (const auto& d : dirs) {
        for (int64_t i = 0; i < d.size(); ++i) {
            out << d.name << ',' << i / d.dim << ',' << i % d.dim << ',' << d.n_hat[static_cast<size_t>(i)] << '\n';
        }
    }
}

void write_ecdf_csv(const std::filesystem::path& path, const std::vector<AttributeDirection>& dirs) {
    std::ofstream out(path);
    out << "attribute,value,fraction\n";
    for (const auto& d : dirs) {
        for (const auto& [v, f] : ecdf(d.n_hat)) {
            out << d.name << ',' << v << ',' << f << '\n';
        }
    }
}

} // namespace hdae
