#pragma once

// Fixture-backed surgical functions and the on-disk fixture bundle.
//
// Bundle layout (schema_version 1, see docs/fixture-bundle.md):
//   <dir>/vocabulary.json          {"schema_version":1,"instruments":[..],"verbs":[..],"targets":[..]}
//   <dir>/annotations/<ref>.json   one SceneFixture per image
//   <dir>/images/<image_file>      binary PGM rendering of the scene

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsa/functions/registry.hpp"
#include "vsa/functions/rle.hpp"
#include "vsa/functions/types.hpp"
#include "vsa/result.hpp"
#include "vsa/rng.hpp"
#include "vsa/text.hpp"

namespace vsa::functions {

struct Vocabulary {
    std::vector<std::string> instruments;
    std::vector<std::string> verbs;
    std::vector<std::string> targets;

    static bool has(const std::vector<std::string>& list, const std::string& w)
    {
        return std::find(list.begin(), list.end(), w) != list.end();
    }

    bool accepts(const Triplet& t) const
    {
        return has(instruments, t.instrument) && has(verbs, t.verb) && has(targets, t.target);
    }

    bool operator==(const Vocabulary&) const = default;
};

/// Pituitary neurosurgery vocabulary; instruments double as the detectable object classes.
inline Vocabulary default_vocabulary()
{
    return {{"navigation probe", "suction", "bipolar forceps", "curette", "scissors", "drill", "rongeur",
             "dissector"},
            {"locate", "aspirate", "coagulate", "scrape", "cut", "drill", "grasp", "dissect", "retract"},
            {"tumor", "tissue", "dura", "mucosa", "bone", "blood", "sella", "septum"}};
}

inline void to_json(nlohmann::json& j, const Vocabulary& v)
{
    j = {{"schema_version", 1}, {"instruments", v.instruments}, {"verbs", v.verbs}, {"targets", v.targets}};
}

inline void from_json(const nlohmann::json& j, Vocabulary& v)
{
    v.instruments = j.at("instruments").get<std::vector<std::string>>();
    v.verbs = j.at("verbs").get<std::vector<std::string>>();
    v.targets = j.at("targets").get<std::vector<std::string>>();
}

// ---------------------------------------------------------------------------
// Fixture functions

/// Annotated detections of `target_class` (case-insensitive) in annotation order; never invents objects.
inline Detections fixture_detect(const SceneFixture& fx, const std::string& target_class)
{
    Detections out;
    for (const auto& d : fx.gt_detections)
        if (text::iequals(d.class_name, target_class)) {
            Detection hit = d;
            hit.score = 1.0;
            out.push_back(std::move(hit));
        }
    return out;
}

struct ClassNotFound {
    std::string class_name;
};

inline Result<SegmentationMask, ClassNotFound> fixture_segment(const SceneFixture& fx, const std::string& target_class)
{
    for (const auto& [cls, mask] : fx.gt_masks)
        if (text::iequals(cls, target_class))
            return mask;
    return unexpected(ClassNotFound{target_class});
}

inline std::string scene_description(const std::vector<Triplet>& triplets)
{
    if (triplets.empty())
        return "no activity recognized";
    std::string out;
    for (const auto& t : triplets) {
        out += out.empty() ? "The " : "; the ";
        out += t.instrument + " is used to " + t.verb + " the " + t.target;
    }
    return out + ".";
}

inline SceneAnalysis fixture_scene(const SceneFixture& fx)
{
    return {fx.gt_triplets, scene_description(fx.gt_triplets)};
}

// ---------------------------------------------------------------------------
// Bundle

struct BundleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FixtureBundle {
    Vocabulary vocabulary = default_vocabulary();
    std::map<std::string, SceneFixture> scenes;
    std::map<std::string, std::string> images; // image_ref -> raw bytes

    const SceneFixture* find(const std::string& image_ref) const
    {
        const auto it = scenes.find(image_ref);
        return it == scenes.end() ? nullptr : &it->second;
    }

    std::optional<std::string> image_bytes(const std::string& image_ref) const
    {
        const auto it = images.find(image_ref);
        if (it == images.end())
            return std::nullopt;
        return it->second;
    }
};

/// Invariant violations of one fixture (empty when valid).
inline std::vector<std::string> validate_fixture(const SceneFixture& fx, const Vocabulary& vocab)
{
    std::vector<std::string> problems;
    if (fx.image_ref.empty())
        problems.push_back("image_ref is empty");
    for (const auto& d : fx.gt_detections) {
        if (!fx.present_objects.count(d.class_name))
            problems.push_back("detection class '" + d.class_name + "' not in present_objects");
        if (auto err = check_detection(d))
            problems.push_back("detection '" + d.class_name + "': " + *err);
    }
    for (const auto& [cls, m] : fx.gt_masks) {
        if (!fx.present_objects.count(cls))
            problems.push_back("mask class '" + cls + "' not in present_objects");
        if (m.width != fx.width || m.height != fx.height)
            problems.push_back("mask '" + cls + "' dimensions differ from the image");
        if (auto err = check_mask(m))
            problems.push_back("mask '" + cls + "': " + *err);
    }
    for (const auto& t : fx.gt_triplets)
        if (!vocab.accepts(t))
            problems.push_back("triplet (" + t.instrument + ", " + t.verb + ", " + t.target +
                               ") uses words outside the vocabulary");
    return problems;
}

/// Binary PGM (P5) with background 40 and each annotated mask painted a distinct grey.
inline std::string render_pgm(const SceneFixture& fx)
{
    std::vector<std::uint8_t> px(fx.width * fx.height, 40);
    std::uint8_t shade = 120;
    for (const auto& [cls, m] : fx.gt_masks) {
        const Bitmap bm = rle_decode(m);
        for (std::size_t i = 0; i < px.size() && i < bm.pixels.size(); ++i)
            if (bm.pixels[i])
                px[i] = shade;
        shade = static_cast<std::uint8_t>(shade + 40);
    }
    std::string out = "P5\n" + std::to_string(fx.width) + " " + std::to_string(fx.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(px.data()), px.size());
    return out;
}

/// Box on the integer pixel grid of a width x height image and its matching filled-rectangle mask.
inline std::pair<Detection, SegmentationMask> pixel_box(const std::string& cls, std::size_t width, std::size_t height,
                                                        std::size_t x0, std::size_t y0, std::size_t x1,
                                                        std::size_t y1)
{
    const double w = static_cast<double>(width), h = static_cast<double>(height);
    return {Detection{cls, {x0 / w, y0 / h, x1 / w, y1 / h}, 1.0}, rect_mask(width, height, x0, y0, x1, y1)};
}

/// The detection example scene: a navigation probe at [0.18, 0.41, 0.45, 0.99] during pituitary
/// adenoma resection.
inline SceneFixture probe_fixture()
{
    SceneFixture fx;
    fx.image_ref = "probe_0001";
    fx.image_file = "probe_0001.pgm";
    fx.width = 100;
    fx.height = 100;
    auto [det, mask] = pixel_box("navigation probe", 100, 100, 18, 41, 45, 99);
    fx.present_objects = {"navigation probe"};
    fx.gt_detections = {det};
    fx.gt_masks = {{"navigation probe", mask}};
    fx.gt_triplets = {{"navigation probe", "locate", "tumor"}};
    fx.caption = "Transsphenoidal pituitary adenoma resection; " + text::to_lower(scene_description(fx.gt_triplets));
    return fx;
}

/// Deterministic bundle: the probe scene followed by `count - 1` random scenes with 1-3 instruments.
inline FixtureBundle make_synthetic_bundle(std::size_t count, std::uint64_t seed)
{
    FixtureBundle b;
    if (count == 0)
        return b;
    auto add = [&](SceneFixture fx) {
        b.images[fx.image_ref] = render_pgm(fx);
        b.scenes[fx.image_ref] = std::move(fx);
    };
    add(probe_fixture());
    Rng rng(derive_seed(seed, 0xF1C));
    const auto& vocab = b.vocabulary;
    for (std::size_t i = 1; i < count; ++i) {
        SceneFixture fx;
        char ref[32];
        std::snprintf(ref, sizeof ref, "scene_%04zu", i + 1);
        fx.image_ref = ref;
        fx.image_file = fx.image_ref + ".pgm";
        std::vector<std::string> pool = vocab.instruments;
        const std::size_t n_obj = 1 + rng.below(3);
        for (std::size_t k = 0; k < n_obj; ++k) {
            const std::size_t pick = rng.below(pool.size());
            const std::string cls = pool[pick];
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
            const std::size_t x0 = rng.below(60), y0 = rng.below(60);
            const std::size_t x1 = x0 + 10 + rng.below(30), y1 = y0 + 10 + rng.below(30);
            auto [det, mask] = pixel_box(cls, fx.width, fx.height, x0, y0, x1, y1);
            fx.present_objects.insert(cls);
            fx.gt_detections.push_back(det);
            fx.gt_masks[cls] = mask;
            fx.gt_triplets.push_back({cls, vocab.verbs[rng.below(vocab.verbs.size())],
                                      vocab.targets[rng.below(vocab.targets.size())]});
        }
        fx.caption = "Endoscopic pituitary surgery; " + text::to_lower(scene_description(fx.gt_triplets));
        add(std::move(fx));
    }
    return b;
}

namespace detail {

inline std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw BundleError("cannot read " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& data)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
        throw BundleError("cannot write " + p.string());
    out << data;
}

} // namespace detail

inline void write_bundle(const std::filesystem::path& dir, const FixtureBundle& b)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir / "annotations");
    fs::create_directories(dir / "images");
    detail::write_file(dir / "vocabulary.json", nlohmann::json(b.vocabulary).dump(2) + "\n");
    for (const auto& [ref, fx] : b.scenes) {
        detail::write_file(dir / "annotations" / (ref + ".json"), nlohmann::json(fx).dump(2) + "\n");
        if (const auto it = b.images.find(ref); it != b.images.end())
            detail::write_file(dir / "images" / fx.image_file, it->second);
    }
}

/// Loads and validates a bundle; any invariant violation aborts with the offending file named.
inline FixtureBundle load_bundle(const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        throw BundleError("fixture bundle '" + dir.string() + "' is not a directory");
    FixtureBundle b;
    if (fs::exists(dir / "vocabulary.json")) {
        try {
            b.vocabulary = nlohmann::json::parse(detail::read_file(dir / "vocabulary.json")).get<Vocabulary>();
        } catch (const nlohmann::json::exception& e) {
            throw BundleError((dir / "vocabulary.json").string() + ": " + e.what());
        }
    }
    if (!fs::is_directory(dir / "annotations"))
        throw BundleError("fixture bundle '" + dir.string() + "' has no annotations/ directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / "annotations"))
        if (e.path().extension() == ".json")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        SceneFixture fx;
        try {
            const auto j = nlohmann::json::parse(detail::read_file(f));
            if (j.value("schema_version", 0) != 1)
                throw BundleError(f.string() + ": unsupported schema_version");
            fx = j.get<SceneFixture>();
        } catch (const nlohmann::json::exception& e) {
            throw BundleError(f.string() + ": " + e.what());
        }
        if (const auto problems = validate_fixture(fx, b.vocabulary); !problems.empty())
            throw BundleError(f.string() + ": " + problems.front());
        if (b.scenes.count(fx.image_ref))
            throw BundleError(f.string() + ": duplicate image_ref '" + fx.image_ref + "'");
        if (!fx.image_file.empty()) {
            const auto img = dir / "images" / fx.image_file;
            if (!fs::exists(img))
                throw BundleError(f.string() + ": image file " + img.string() + " is missing");
            b.images[fx.image_ref] = detail::read_file(img);
        }
        b.scenes[fx.image_ref] = std::move(fx);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Registry construction

inline FunctionSpec detect_spec()
{
    return {"detect",
            {{"target", "name of the instrument or object to localize"}},
            OutputKind::detections,
            "Detects the requested object and returns normalized bounding boxes."};
}

inline FunctionSpec segment_spec()
{
    return {"segment",
            {{"target", "name of the instrument or object to segment"}},
            OutputKind::mask,
            "Segments the requested object and returns a run-length encoded mask."};
}

inline FunctionSpec scene_spec()
{
    return {"analyze_scene", {}, OutputKind::scene,
            "Recognizes surgical activity as (instrument, verb, target) triplets."};
}

/// Additional realistic function specs used to grow the registry in scalability sweeps.
inline std::vector<FunctionSpec> distractor_specs()
{
    return {{"classify_phase", {}, OutputKind::scene, "Classifies the current surgical phase."},
            {"estimate_depth", {}, OutputKind::mask, "Estimates a coarse depth map of the scene."},
            {"track_instrument",
             {{"target", "instrument to track across frames"}},
             OutputKind::detections,
             "Tracks an instrument over a short clip."}};
}

/// Names in registration order for a registry of the given size (3 = default set, up to 6).
inline std::vector<std::string> function_names(std::size_t count)
{
    std::vector<std::string> all = {"detect", "segment", "analyze_scene"};
    for (const auto& s : distractor_specs())
        all.push_back(s.api_name);
    if (count > all.size())
        throw std::invalid_argument("at most " + std::to_string(all.size()) + " functions are available");
    all.resize(count);
    return all;
}

namespace detail {

inline const SceneFixture& scene_for(const FixtureBundle& b, const CallContext& ctx)
{
    if (!ctx.image_ref)
        throw FunctionFailure(FailureCause::missing_input, "no image attached to the query");
    const auto* fx = b.find(*ctx.image_ref);
    if (!fx)
        throw FunctionFailure(FailureCause::missing_input, "unknown image '" + *ctx.image_ref + "'");
    return *fx;
}

} // namespace detail

/// Registry of fixture-backed functions named by `names` (see function_names()).
inline Registry make_fixture_registry(std::shared_ptr<const FixtureBundle> bundle,
                                      const std::vector<std::string>& names = function_names(3))
{
    Registry reg;
    for (const auto& name : names) {
        if (name == "detect") {
            reg.register_function(detect_spec(), [bundle](const Params& p, const CallContext& ctx) {
                const auto& fx = detail::scene_for(*bundle, ctx);
                return FunctionResult{"detect", fixture_detect(fx, p.at("target"))};
            });
        } else if (name == "segment") {
            reg.register_function(segment_spec(), [bundle](const Params& p, const CallContext& ctx) {
                const auto& fx = detail::scene_for(*bundle, ctx);
                auto mask = fixture_segment(fx, p.at("target"));
                if (mask)
                    return FunctionResult{"segment", *mask};
                // Absent objects yield an empty mask; a present object without annotation is a fixture gap.
                for (const auto& obj : fx.present_objects)
                    if (text::iequals(obj, p.at("target")))
                        throw FunctionFailure(FailureCause::missing_input,
                                              "no mask annotated for '" + p.at("target") + "'");
                return FunctionResult{"segment", rect_mask(fx.width, fx.height, 0, 0, 0, 0)};
            });
        } else if (name == "analyze_scene") {
            reg.register_function(scene_spec(), [bundle](const Params&, const CallContext& ctx) {
                return FunctionResult{"analyze_scene", fixture_scene(detail::scene_for(*bundle, ctx))};
            });
        } else {
            const auto specs = distractor_specs();
            const auto it = std::find_if(specs.begin(), specs.end(),
                                         [&](const FunctionSpec& s) { return s.api_name == name; });
            if (it == specs.end())
                throw std::invalid_argument("unknown fixture function '" + name + "'");
            const FunctionSpec spec = *it;
            reg.register_function(spec, [bundle, spec](const Params&, const CallContext& ctx) {
                const auto& fx = detail::scene_for(*bundle, ctx);
                switch (spec.output_kind) {
                case OutputKind::detections:
                    return FunctionResult{spec.api_name, Detections{}};
                case OutputKind::mask:
                    return FunctionResult{spec.api_name, rect_mask(fx.width, fx.height, 0, 0, 0, 0)};
                case OutputKind::scene:
                    break;
                }
                return FunctionResult{spec.api_name, SceneAnalysis{{}, "no activity recognized"}};
            });
        }
    }
    return reg;
}

} // namespace vsa::functions
