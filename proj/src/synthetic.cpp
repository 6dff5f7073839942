#include "stsa/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "stsa/rng.hpp"

namespace stsa {

namespace {

double fold(double p, double limit) {
    if (limit <= 0.0) return 0.0;
    const double period = 2.0 * limit;
    double m = std::fmod(p, period);
    if (m < 0.0) m += period;
    return m > limit ? period - m : m;
}

// Low-frequency texture: a few random plane waves per colour channel.
struct Texture {
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::array<std::vector<Wave>, 3> waves;

    Texture(std::uint64_t seed, std::size_t height, std::size_t width) {
        SplitMix64 rng(seed);
        const double scale = 6.283185307179586 / static_cast<double>(std::max(height, width));
        for (auto& ch : waves) {
            for (int i = 0; i < 4; ++i) {
                ch.push_back(Wave{rng.uniform(-3.0, 3.0) * scale, rng.uniform(-3.0, 3.0) * scale,
                                  rng.uniform(0.0, 6.283185307179586), rng.uniform(0.25, 1.0)});
            }
        }
    }

    double at(std::size_t c, double x, double y) const {
        double v = 0.0, norm = 0.0;
        for (const auto& w : waves[c]) {
            v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
            norm += w.amp;
        }
        return v / norm;  // in [-1, 1]
    }
};

}  // namespace

void SyntheticScene::validate() const {
    if (blobs.empty()) throw ContractError("synthetic scene needs at least one blob");
    for (const auto& b : blobs) {
        if (!(b.sigma > 0.0)) throw ContractError("blob sigma must be positive");
        if (!(b.brightness >= 0.0)) throw ContractError("blob brightness must be non-negative");
    }
}

std::array<double, 2> blob_center(const Blob& b, std::size_t frame, std::size_t height,
                                  std::size_t width) {
    const double t = static_cast<double>(frame);
    return {fold(b.x0 + b.vx * t, static_cast<double>(width) - 1.0),
            fold(b.y0 + b.vy * t, static_cast<double>(height) - 1.0)};
}

SyntheticScene random_scene(std::uint64_t seed, std::size_t height, std::size_t width) {
    SplitMix64 rng(seed);
    SyntheticScene scene;
    scene.texture_seed = rng.next();
    const double unit = static_cast<double>(std::min(height, width)) / 32.0;
    const std::size_t count = 1 + rng.below(3);
    for (std::size_t i = 0; i < count; ++i) {
        Blob b;
        b.sigma = unit * rng.uniform(2.0, 3.5);
        const double margin = b.sigma;
        b.x0 = rng.uniform(margin, static_cast<double>(width) - 1.0 - margin);
        b.y0 = rng.uniform(margin, static_cast<double>(height) - 1.0 - margin);
        const double speed = unit * rng.uniform(0.2, 1.0);
        const double angle = rng.uniform(0.0, 6.283185307179586);
        b.vx = speed * std::cos(angle);
        b.vy = speed * std::sin(angle);
        b.brightness = rng.uniform(0.75, 1.0);
        for (auto& c : b.color) c = rng.uniform(0.7, 1.0);
        scene.blobs.push_back(b);
    }
    return scene;
}

SyntheticClip gen_synthetic_clip(const SyntheticScene& scene, std::size_t frames, std::size_t height,
                                 std::size_t width, std::uint64_t seed) {
    scene.validate();
    if (frames == 0 || height == 0 || width == 0) throw ContractError("clip extents must be positive");
    const Texture texture(scene.texture_seed, height, width);
    SplitMix64 rng(seed);

    SyntheticClip clip{Tensor<float>(Shape{frames, 3, height, width}),
                       Tensor<float>(Shape{frames, height, width}), FixationTable(frames)};
    const std::size_t plane = height * width;
    std::vector<double> g(plane);
    for (std::size_t f = 0; f < frames; ++f) {
        std::vector<std::array<double, 2>> centers;
        for (const auto& b : scene.blobs) centers.push_back(blob_center(b, f, height, width));

        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double px = static_cast<double>(x), py = static_cast<double>(y);
                double mass = 0.0;
                std::array<double, 3> light{0.0, 0.0, 0.0};
                for (std::size_t k = 0; k < scene.blobs.size(); ++k) {
                    const Blob& b = scene.blobs[k];
                    const double dx = px - centers[k][0], dy = py - centers[k][1];
                    const double e = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
                    mass += e;
                    for (std::size_t c = 0; c < 3; ++c) light[c] += b.brightness * b.color[c] * e;
                }
                g[y * width + x] = mass;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double bg = scene.background + scene.texture_amplitude * texture.at(c, px, py);
                    const double v = std::clamp(bg + light[c], 0.0, 1.0);
                    clip.frames[((f * 3 + c) * height + y) * width + x] = static_cast<float>(v);
                }
            }
        }

        double total = 0.0;
        for (double v : g) total += v;
        for (std::size_t i = 0; i < plane; ++i) {
            clip.density[f * plane + i] = static_cast<float>(g[i] / total);
        }

        // inverse-CDF sampling on the exact (double) density
        for (std::size_t n = 0; n < kFixationsPerFrame; ++n) {
            const double u = rng.uniform() * total;
            double acc = 0.0;
            std::size_t pick = plane - 1;
            for (std::size_t i = 0; i < plane; ++i) {
                acc += g[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
            while (g[pick] <= 0.0 && pick > 0) --pick;
            clip.fixations[f].push_back(FixationPoint{pick % width, pick / width});
        }
    }
    return clip;
}

}  // namespace stsa
