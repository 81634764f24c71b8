#include "geoprobe/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "geoprobe/errors.hpp"
#include "geoprobe/fmat.hpp"
#include "geoprobe/json_util.hpp"
#include "geoprobe/parallel.hpp"
#include "geoprobe/rng.hpp"

namespace geoprobe::features {

namespace {

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t digest_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

// --- FFT plumbing (plans cached per size, execution is thread-safe) -----------

class Fft2d {
public:
    static Fft2d& instance() {
        static Fft2d fft;
        return fft;
    }

    void forward(int h, int w, std::complex<double>* in, std::complex<double>* out) {
        execute(plans(h, w).fwd, in, out);
    }

    // Unnormalized inverse; caller divides by h*w.
    void backward(int h, int w, std::complex<double>* in, std::complex<double>* out) {
        execute(plans(h, w).bwd, in, out);
    }

private:
    struct PlanPair {
        fftw_plan fwd = nullptr;
        fftw_plan bwd = nullptr;
    };

    ~Fft2d() {
        for (auto& [key, pp] : plans_) {
            fftw_destroy_plan(pp.fwd);
            fftw_destroy_plan(pp.bwd);
        }
    }

    const PlanPair& plans(int h, int w) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = plans_.find({h, w});
        if (it != plans_.end()) return it->second;
        std::vector<std::complex<double>> a(static_cast<std::size_t>(h) * w);
        std::vector<std::complex<double>> b(a.size());
        PlanPair pp;
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        pp.fwd = fftw_plan_dft_2d(h, w, reinterpret_cast<fftw_complex*>(a.data()),
                                  reinterpret_cast<fftw_complex*>(b.data()), FFTW_FORWARD, flags);
        pp.bwd = fftw_plan_dft_2d(h, w, reinterpret_cast<fftw_complex*>(a.data()),
                                  reinterpret_cast<fftw_complex*>(b.data()), FFTW_BACKWARD, flags);
        if (!pp.fwd || !pp.bwd) throw DataError("FFT plan creation failed");
        return plans_.emplace(std::make_pair(h, w), pp).first->second;
    }

    static void execute(fftw_plan plan, std::complex<double>* in, std::complex<double>* out) {
        fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in),
                         reinterpret_cast<fftw_complex*>(out));
    }

    std::mutex mutex_;
    std::map<std::pair<int, int>, PlanPair> plans_;
};

// Signed DFT bin frequency in cycles/pixel.
double bin_freq(int k, int n) {
    return (k <= n / 2 ? k : k - n) / static_cast<double>(n);
}

// Transfer functions for one gist config, shared across worker threads.
using TransferBank = std::vector<std::vector<double>>;

std::shared_ptr<const TransferBank> transfer_bank(const GistConfig& cfg) {
    struct Key {
        int resize, scales, orients;
        auto operator<=>(const Key&) const = default;
    };
    static std::mutex mutex;
    static std::map<Key, std::shared_ptr<const TransferBank>> cache;

    const Key key{cfg.resize, cfg.n_scales, cfg.n_orientations};
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    auto bank = std::make_shared<TransferBank>();
    bank->reserve(static_cast<std::size_t>(cfg.n_scales) * cfg.n_orientations);
    for (int s = 0; s < cfg.n_scales; ++s)
        for (int o = 0; o < cfg.n_orientations; ++o) bank->push_back(gist_filter(cfg, s, o));
    cache.emplace(key, bank);
    return bank;
}

std::vector<double> bilinear_resize(const std::vector<double>& src, int sh, int sw, int dh,
                                    int dw) {
    std::vector<double> dst(static_cast<std::size_t>(dh) * dw);
    const double sy = static_cast<double>(sh) / dh;
    const double sx = static_cast<double>(sw) / dw;
    for (int y = 0; y < dh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double wy = fy - y0;
        for (int x = 0; x < dw; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double wx = fx - x0;
            const double top = src[static_cast<std::size_t>(y0) * sw + x0] * (1.0 - wx) +
                               src[static_cast<std::size_t>(y0) * sw + x1] * wx;
            const double bot = src[static_cast<std::size_t>(y1) * sw + x0] * (1.0 - wx) +
                               src[static_cast<std::size_t>(y1) * sw + x1] * wx;
            dst[static_cast<std::size_t>(y) * dw + x] = top * (1.0 - wy) + bot * wy;
        }
    }
    return dst;
}

std::string sanitize_for_filename(std::string s) {
    for (char& c : s)
        if (c == ':' || c == '/' || c == '\\') c = '_';
    return s;
}

nlohmann::json spec_config_json(const FeaturizerSpec& spec) {
    switch (spec.kind) {
        case FeaturizerKind::Gist:
            return {{"type", "gist"},
                    {"resize", spec.gist.resize},
                    {"n_scales", spec.gist.n_scales},
                    {"n_orientations", spec.gist.n_orientations},
                    {"grid", spec.gist.grid}};
        case FeaturizerKind::RandConv:
            return {{"type", "randconv"},
                    {"n_filters", spec.randconv.n_filters},
                    {"patch", spec.randconv.patch},
                    {"bias", spec.randconv.bias},
                    {"pool_grid", spec.randconv.pool_grid},
                    {"channels", spec.randconv.channels},
                    {"seed", spec.randconv.seed}};
        case FeaturizerKind::External:
            return {{"type", "external"}, {"path", spec.external_path.string()}};
    }
    return {};
}

}  // namespace

// --- configs -------------------------------------------------------------------

void GistConfig::validate() const {
    if (resize < 2) throw ConfigError("gist: resize must be >= 2");
    if (n_scales < 1 || n_orientations < 1) throw ConfigError("gist: scales/orientations >= 1");
    if (grid < 1) throw ConfigError("gist: grid must be >= 1");
    if (resize % grid != 0) throw ConfigError("gist: resize must be divisible by grid");
}

void RandomConvConfig::validate() const {
    if (n_filters < 1) throw ConfigError("randconv: n_filters must be >= 1");
    if (patch < 1) throw ConfigError("randconv: patch must be >= 1");
    if (patch * patch * channels < 2)
        throw ConfigError("randconv: filters need at least 2 entries to be zero-meaned");
    if (pool_grid < 1) throw ConfigError("randconv: pool_grid must be >= 1");
    if (channels != 1 && channels != 3) throw ConfigError("randconv: channels must be 1 or 3");
    if (!std::isfinite(bias)) throw ConfigError("randconv: bias must be finite");
}

// --- gist ------------------------------------------------------------------------

std::vector<double> gist_preprocess(const geo::ImageTile& tile, const GistConfig& cfg) {
    cfg.validate();
    if (tile.height < 1 || tile.width < 1 || tile.pixels.empty())
        throw DataError("gist: empty tile " + tile.id.str());
    std::vector<double> gray(static_cast<std::size_t>(tile.height) * tile.width);
    if (tile.channels == 1) {
        for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = tile.pixels[i];
    } else if (tile.channels == 3) {
        for (std::size_t i = 0; i < gray.size(); ++i) {
            const std::uint8_t* px = tile.pixels.data() + i * 3;
            gray[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
    } else {
        throw DataError("gist: unsupported channel count " + std::to_string(tile.channels));
    }
    if (tile.height == cfg.resize && tile.width == cfg.resize) return gray;
    return bilinear_resize(gray, tile.height, tile.width, cfg.resize, cfg.resize);
}

std::vector<double> gist_filter(const GistConfig& cfg, int scale, int orientation) {
    cfg.validate();
    if (scale < 0 || scale >= cfg.n_scales || orientation < 0 ||
        orientation >= cfg.n_orientations)
        throw ConfigError("gist_filter: scale/orientation out of range");

    const int n = cfg.resize;
    const double center_freq = 0.25 / std::pow(2.0, scale);
    const double theta0 = orientation * std::numbers::pi / cfg.n_orientations;
    const double sigma_radial = std::numbers::ln2 / 2.0;  // about one octave FWHM
    const double sigma_angular = std::numbers::pi / (2.0 * cfg.n_orientations);

    std::vector<double> transfer(static_cast<std::size_t>(n) * n, 0.0);
    for (int ky = 0; ky < n; ++ky) {
        const double fy = bin_freq(ky, n);
        for (int kx = 0; kx < n; ++kx) {
            const double fx = bin_freq(kx, n);
            const double f = std::hypot(fx, fy);
            if (f == 0.0) continue;  // band-pass: zero DC gain
            double dtheta = std::atan2(fy, fx) - theta0;
            while (dtheta > std::numbers::pi) dtheta -= 2.0 * std::numbers::pi;
            while (dtheta <= -std::numbers::pi) dtheta += 2.0 * std::numbers::pi;
            const double lr = std::log(f / center_freq);
            transfer[static_cast<std::size_t>(ky) * n + kx] =
                std::exp(-lr * lr / (2.0 * sigma_radial * sigma_radial) -
                         dtheta * dtheta / (2.0 * sigma_angular * sigma_angular));
        }
    }
    return transfer;
}

std::vector<double> gist(const geo::ImageTile& tile, const GistConfig& cfg) {
    const auto image = gist_preprocess(tile, cfg);
    const int n = cfg.resize;
    const std::size_t npix = static_cast<std::size_t>(n) * n;
    const auto bank = transfer_bank(cfg);

    std::vector<std::complex<double>> buf(npix), spectrum(npix), filtered(npix), response(npix);
    for (std::size_t i = 0; i < npix; ++i) buf[i] = image[i];
    Fft2d::instance().forward(n, n, buf.data(), spectrum.data());

    const int cell = n / cfg.grid;
    const double inv_n2 = 1.0 / static_cast<double>(npix);
    std::vector<double> out(static_cast<std::size_t>(cfg.dim()), 0.0);

    for (std::size_t fidx = 0; fidx < bank->size(); ++fidx) {
        const auto& transfer = (*bank)[fidx];
        for (std::size_t i = 0; i < npix; ++i) filtered[i] = spectrum[i] * transfer[i];
        Fft2d::instance().backward(n, n, filtered.data(), response.data());

        for (int cy = 0; cy < cfg.grid; ++cy) {
            for (int cx = 0; cx < cfg.grid; ++cx) {
                double acc = 0.0;
                for (int y = cy * cell; y < (cy + 1) * cell; ++y) {
                    for (int x = cx * cell; x < (cx + 1) * cell; ++x) {
                        const std::complex<double> r = response[static_cast<std::size_t>(y) * n + x] * inv_n2;
                        acc += std::norm(r);
                    }
                }
                out[(fidx * cfg.grid + cy) * cfg.grid + cx] = acc / (cell * cell);
            }
        }
    }
    return out;
}

// --- random convolutional features -----------------------------------------------

FilterBank make_filter_bank(const RandomConvConfig& cfg) {
    cfg.validate();
    const std::size_t filter_size = static_cast<std::size_t>(cfg.channels) * cfg.patch * cfg.patch;
    FilterBank bank;
    bank.cfg = cfg;
    bank.weights.resize(static_cast<std::size_t>(cfg.n_filters) * filter_size);

    for (int f = 0; f < cfg.n_filters; ++f) {
        rng::Stream stream(rng::stream_key(cfg.seed, "randconv.filter", static_cast<std::uint64_t>(f)));
        double* w = bank.weights.data() + static_cast<std::size_t>(f) * filter_size;
        double mean = 0.0;
        for (std::size_t i = 0; i < filter_size; ++i) {
            w[i] = stream.next_normal();
            mean += w[i];
        }
        mean /= static_cast<double>(filter_size);
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < filter_size; ++i) {
            w[i] -= mean;
            norm_sq += w[i] * w[i];
        }
        const double norm = std::sqrt(norm_sq);
        if (norm < 1e-30) throw DataError("make_filter_bank: degenerate filter draw");
        for (std::size_t i = 0; i < filter_size; ++i) w[i] /= norm;
    }

    FeaturizerSpec spec;
    spec.kind = FeaturizerKind::RandConv;
    spec.randconv = cfg;
    bank.provenance = spec.tag();
    return bank;
}

std::vector<double> random_conv_features(const geo::ImageTile& tile, const FilterBank& bank,
                                         const RandomConvConfig& cfg) {
    cfg.validate();
    FeaturizerSpec spec;
    spec.kind = FeaturizerKind::RandConv;
    spec.randconv = cfg;
    if (bank.provenance != spec.tag())
        throw DataError("random_conv_features: filter bank provenance does not match config");
    if (tile.channels != cfg.channels)
        throw DataError("random_conv_features: tile " + tile.id.str() + " has " +
                        std::to_string(tile.channels) + " channels, config expects " +
                        std::to_string(cfg.channels));
    if (tile.height < cfg.patch || tile.width < cfg.patch)
        throw DataError("random_conv_features: tile " + tile.id.str() + " smaller than patch");

    const int p = cfg.patch;
    const int oh = tile.height - p + 1;
    const int ow = tile.width - p + 1;
    const int pg = cfg.pool_grid;
    if (oh < pg || ow < pg)
        throw DataError("random_conv_features: valid response map smaller than pool grid");

    const int k = cfg.channels * p * p;
    Eigen::MatrixXd patches(static_cast<Eigen::Index>(oh) * ow, k);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const Eigen::Index row = static_cast<Eigen::Index>(y) * ow + x;
            int col = 0;
            for (int c = 0; c < cfg.channels; ++c)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        patches(row, col++) = tile.at(y + dy, x + dx, c) / 255.0;
        }
    }

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        filters(bank.weights.data(), cfg.n_filters, k);
    Eigen::MatrixXd responses = patches * filters.transpose();  // (oh*ow) x n_filters
    responses = (responses.array() - cfg.bias).max(0.0);

    std::vector<double> out(static_cast<std::size_t>(cfg.dim()), 0.0);
    for (int f = 0; f < cfg.n_filters; ++f) {
        for (int cy = 0; cy < pg; ++cy) {
            const int y0 = cy * oh / pg;
            const int y1 = (cy + 1) * oh / pg;
            for (int cx = 0; cx < pg; ++cx) {
                const int x0 = cx * ow / pg;
                const int x1 = (cx + 1) * ow / pg;
                double acc = 0.0;
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x)
                        acc += responses(static_cast<Eigen::Index>(y) * ow + x, f);
                out[(static_cast<std::size_t>(f) * pg + cy) * pg + cx] =
                    acc / (static_cast<double>(y1 - y0) * (x1 - x0));
            }
        }
    }
    return out;
}

// --- feature matrix ---------------------------------------------------------------

std::size_t FeatureMatrix::row_of(const geo::TileId& id) const {
    const auto it = std::lower_bound(row_ids.begin(), row_ids.end(), id);
    if (it == row_ids.end() || !(*it == id))
        throw DataError("feature matrix has no row for tile " + id.str());
    return static_cast<std::size_t>(it - row_ids.begin());
}

Eigen::MatrixXd rows_as_matrix(const FeatureMatrix& fm, std::span<const geo::TileId> ids) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(fm.d));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::size_t row = fm.row_of(ids[i]);
        for (std::size_t j = 0; j < fm.d; ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                fm.values[row * fm.d + j];
    }
    return out;
}

// --- featurizer spec ---------------------------------------------------------------

std::string FeaturizerSpec::name() const {
    switch (kind) {
        case FeaturizerKind::Gist: return "gist";
        case FeaturizerKind::RandConv: return "randconv";
        case FeaturizerKind::External: return "external";
    }
    return "?";
}

std::string FeaturizerSpec::tag() const {
    switch (kind) {
        case FeaturizerKind::Gist: {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "gist|resize=%d|scales=%d|orients=%d|grid=%d",
                          gist.resize, gist.n_scales, gist.n_orientations, gist.grid);
            return "gist-" + hex16(rng::hash_tag(buf));
        }
        case FeaturizerKind::RandConv: {
            char buf[192];
            std::snprintf(buf, sizeof(buf),
                          "randconv|filters=%d|patch=%d|bias=%.17g|pool=%d|ch=%d|seed=%llu",
                          randconv.n_filters, randconv.patch, randconv.bias, randconv.pool_grid,
                          randconv.channels, static_cast<unsigned long long>(randconv.seed));
            return "randconv-" + hex16(rng::hash_tag(buf));
        }
        case FeaturizerKind::External:
            return "external:" + hex16(digest_file(external_path));
    }
    return "?";
}

void FeaturizerSpec::validate() const {
    switch (kind) {
        case FeaturizerKind::Gist: gist.validate(); break;
        case FeaturizerKind::RandConv: randconv.validate(); break;
        case FeaturizerKind::External:
            if (external_path.empty())
                throw ConfigError("external featurizer requires a matrix path");
            break;
    }
}

nlohmann::json spec_to_json(const FeaturizerSpec& spec) { return spec_config_json(spec); }

FeaturizerSpec spec_from_json(const nlohmann::json& j) {
    FeaturizerSpec spec;
    try {
        const auto type = j.at("type").get<std::string>();
        if (type == "gist") {
            spec.kind = FeaturizerKind::Gist;
            spec.gist.resize = j.value("resize", spec.gist.resize);
            spec.gist.n_scales = j.value("n_scales", spec.gist.n_scales);
            spec.gist.n_orientations = j.value("n_orientations", spec.gist.n_orientations);
            spec.gist.grid = j.value("grid", spec.gist.grid);
        } else if (type == "randconv") {
            spec.kind = FeaturizerKind::RandConv;
            spec.randconv.n_filters = j.value("n_filters", spec.randconv.n_filters);
            spec.randconv.patch = j.value("patch", spec.randconv.patch);
            spec.randconv.bias = j.value("bias", spec.randconv.bias);
            spec.randconv.pool_grid = j.value("pool_grid", spec.randconv.pool_grid);
            spec.randconv.channels = j.value("channels", spec.randconv.channels);
            spec.randconv.seed = j.value("seed", spec.randconv.seed);
        } else if (type == "external") {
            spec.kind = FeaturizerKind::External;
            spec.external_path = j.at("path").get<std::string>();
        } else {
            throw ConfigError("unknown featurizer type '" + type + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad featurizer spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

// --- corpus pipeline ----------------------------------------------------------------

namespace {

std::vector<std::size_t> canonical_order(const std::vector<geo::ImageTile>& tiles) {
    std::vector<std::size_t> order(tiles.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return tiles[a].id < tiles[b].id; });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (tiles[order[i - 1]].id == tiles[order[i]].id)
            throw DataError("featurize_corpus: duplicate tile id " + tiles[order[i]].id.str());
    return order;
}

FeatureMatrix subset_rows(const FeatureMatrix& fm, const std::vector<geo::TileId>& ids) {
    FeatureMatrix out;
    out.n = ids.size();
    out.d = fm.d;
    out.featurizer_tag = fm.featurizer_tag;
    out.row_ids = ids;
    out.values.resize(out.n * out.d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::size_t src = fm.row_of(ids[i]);
        std::copy_n(fm.values.begin() + static_cast<std::ptrdiff_t>(src * fm.d), fm.d,
                    out.values.begin() + static_cast<std::ptrdiff_t>(i * out.d));
    }
    return out;
}

void check_finite(const FeatureMatrix& fm) {
    for (std::size_t i = 0; i < fm.values.size(); ++i) {
        if (!std::isfinite(fm.values[i]))
            throw DataError("non-finite feature value at row " + std::to_string(i / fm.d) +
                            " (tile " + fm.row_ids[i / fm.d].str() + ")");
    }
}

}  // namespace

FeatureMatrix featurize_corpus(const std::vector<geo::ImageTile>& tiles,
                               const FeaturizerSpec& spec, const FeaturizeOptions& options,
                               FeaturizeStats* stats) {
    spec.validate();
    if (tiles.empty()) throw DataError("featurize_corpus: no tiles");
    FeaturizeStats local;
    const auto order = canonical_order(tiles);
    std::vector<geo::TileId> ids(tiles.size());
    for (std::size_t i = 0; i < order.size(); ++i) ids[i] = tiles[order[i]].id;

    if (spec.kind == FeaturizerKind::External) {
        auto full = load_external_features(spec.external_path);
        auto fm = subset_rows(full, ids);
        if (stats) *stats = local;
        return fm;
    }

    const std::string tag = spec.tag();
    const auto dim = static_cast<std::size_t>(
        spec.kind == FeaturizerKind::Gist ? spec.gist.dim() : spec.randconv.dim());
    std::filesystem::path cache_path;
    if (!options.cache_dir.empty()) {
        cache_path = options.cache_dir / (sanitize_for_filename(tag) + ".fmat");
        if (std::filesystem::exists(cache_path)) {
            try {
                auto cached = load_features(cache_path);
                if (cached.featurizer_tag == tag && cached.row_ids == ids && cached.d == dim) {
                    local.cache_hit = true;
                    if (stats) *stats = local;
                    return cached;
                }
            } catch (const DataError&) {
                // corrupt cache: fall through and recompute
            }
        }
    }

    FeatureMatrix fm;
    fm.n = tiles.size();
    fm.d = dim;
    fm.featurizer_tag = tag;
    fm.row_ids = ids;
    fm.values.resize(fm.n * fm.d);

    FilterBank bank;
    if (spec.kind == FeaturizerKind::RandConv) bank = make_filter_bank(spec.randconv);
    if (spec.kind == FeaturizerKind::Gist) transfer_bank(spec.gist);  // build once up front

    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(0, tiles.size(), options.workers, [&](std::size_t i) {
        const auto& tile = tiles[order[i]];
        const std::vector<double> vec = spec.kind == FeaturizerKind::Gist
                                            ? gist(tile, spec.gist)
                                            : random_conv_features(tile, bank, spec.randconv);
        float* dst = fm.values.data() + i * fm.d;
        for (std::size_t j = 0; j < fm.d; ++j) dst[j] = static_cast<float>(vec[j]);
    });
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
    local.tiles_featurized = tiles.size();
    local.tiles_per_second =
        elapsed.count() > 0.0 ? static_cast<double>(tiles.size()) / elapsed.count() : 0.0;

    check_finite(fm);

    if (!cache_path.empty()) {
        std::filesystem::create_directories(options.cache_dir);
        const auto tmp = cache_path.string() + ".tmp";
        save_features(tmp, fm);
        std::filesystem::rename(tmp + ".meta.json", cache_path.string() + ".meta.json");
        std::filesystem::rename(tmp, cache_path);
    }
    if (stats) *stats = local;
    return fm;
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& fm) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    fmat::Block block{fm.n, fm.d, fm.values};
    fmat::write_block(out, block);
    out.close();
    if (!out) throw DataError("write failed for " + path.string());

    nlohmann::json meta{{"n", fm.n},
                        {"d", fm.d},
                        {"featurizer_tag", fm.featurizer_tag},
                        {"row_ids", tile_ids_to_json(fm.row_ids)}};
    save_json_file(path.string() + ".meta.json", meta);
}

FeatureMatrix load_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    auto block = fmat::read_block(in);

    const auto meta = load_json_file(path.string() + ".meta.json");
    FeatureMatrix fm;
    fm.n = block.rows;
    fm.d = block.cols;
    fm.values = std::move(block.values);
    try {
        fm.featurizer_tag = meta.at("featurizer_tag").get<std::string>();
        fm.row_ids = tile_ids_from_json(meta.at("row_ids"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad feature sidecar for " + path.string() + ": " + e.what());
    }
    if (fm.row_ids.size() != fm.n)
        throw DataError("feature sidecar row count disagrees with matrix for " + path.string());
    return fm;
}

namespace {

FeatureMatrix external_from_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty feature CSV " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream header(line);
    std::string field;
    std::vector<std::string> cols;
    while (std::getline(header, field, ',')) cols.push_back(field);
    if (cols.size() < 2 || cols[0] != "tile_id")
        throw DataError("feature CSV header must be tile_id,f0,f1,...");

    FeatureMatrix fm;
    fm.d = cols.size() - 1;
    std::vector<std::pair<geo::TileId, std::vector<float>>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id_field;
        if (!std::getline(ss, id_field, ','))
            throw DataError("line " + std::to_string(line_no) + ": missing tile_id");
        const auto sep = id_field.find('_');
        if (sep == std::string::npos)
            throw DataError("line " + std::to_string(line_no) + ": tile_id must be row_col");
        geo::TileId id;
        try {
            id.row = std::stoi(id_field.substr(0, sep));
            id.col = std::stoi(id_field.substr(sep + 1));
        } catch (const std::exception&) {
            throw DataError("line " + std::to_string(line_no) + ": bad tile_id '" + id_field + "'");
        }
        std::vector<float> vals;
        vals.reserve(fm.d);
        while (std::getline(ss, field, ',')) {
            try {
                vals.push_back(std::stof(field));
            } catch (const std::exception&) {
                throw DataError("line " + std::to_string(line_no) + ": bad value '" + field + "'");
            }
        }
        if (vals.size() != fm.d)
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(fm.d) + " values, got " + std::to_string(vals.size()));
        rows.emplace_back(id, std::move(vals));
    }

    fm.n = rows.size();
    fm.values.resize(fm.n * fm.d);
    fm.row_ids.resize(fm.n);
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < rows.size(); ++i) {
        fm.row_ids[i] = rows[i].first;
        std::copy(rows[i].second.begin(), rows[i].second.end(),
                  fm.values.begin() + static_cast<std::ptrdiff_t>(i * fm.d));
    }
    return fm;
}

std::vector<geo::TileId> ids_from_file(const std::filesystem::path& ids_file) {
    const auto j = load_json_file(ids_file);
    if (j.is_array()) return tile_ids_from_json(j);
    if (j.is_object() && j.contains("row_ids")) return tile_ids_from_json(j.at("row_ids"));
    throw DataError("ids file " + ids_file.string() +
                    " must be a JSON array of [row, col] or carry a row_ids field");
}

}  // namespace

FeatureMatrix load_external_features(const std::filesystem::path& matrix_file,
                                     const std::filesystem::path& ids_file) {
    if (!std::filesystem::exists(matrix_file))
        throw DataError("feature file " + matrix_file.string() + " does not exist");

    FeatureMatrix fm;
    if (matrix_file.extension() == ".csv") {
        fm = external_from_csv(matrix_file);
    } else {
        std::ifstream in(matrix_file, std::ios::binary);
        if (!in) throw DataError("cannot open " + matrix_file.string());
        auto block = fmat::read_block(in);
        fm.n = block.rows;
        fm.d = block.cols;
        fm.values = std::move(block.values);

        const auto ids_path = ids_file.empty()
                                  ? std::filesystem::path(matrix_file.string() + ".meta.json")
                                  : ids_file;
        auto ids = ids_from_file(ids_path);
        if (ids.size() != fm.n)
            throw DataError("ids file has " + std::to_string(ids.size()) +
                            " entries but matrix has " + std::to_string(fm.n) + " rows");

        // Re-order rows into canonical id order.
        std::vector<std::size_t> order(fm.n);
        for (std::size_t i = 0; i < fm.n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
        std::vector<float> sorted(fm.values.size());
        fm.row_ids.resize(fm.n);
        for (std::size_t i = 0; i < fm.n; ++i) {
            fm.row_ids[i] = ids[order[i]];
            std::copy_n(fm.values.begin() + static_cast<std::ptrdiff_t>(order[i] * fm.d), fm.d,
                        sorted.begin() + static_cast<std::ptrdiff_t>(i * fm.d));
        }
        fm.values = std::move(sorted);
    }

    for (std::size_t i = 1; i < fm.row_ids.size(); ++i)
        if (fm.row_ids[i - 1] == fm.row_ids[i])
            throw DataError("duplicate tile id " + fm.row_ids[i].str() + " in external features");
    check_finite(fm);
    fm.featurizer_tag = "external:" + hex16(digest_file(matrix_file));
    return fm;
}

}  // namespace geoprobe::features
