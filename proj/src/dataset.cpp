#include "bidrl/dataset.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "bidrl/binio.hpp"
#include "bidrl/error.hpp"
#include "bidrl/parallel.hpp"

namespace bidrl {

namespace {

constexpr std::string_view kMagic = "BIDRLDS1";
constexpr std::string_view kEndMagic = "BIDRLEND";

std::vector<std::string> names_of(std::span<const std::string_view> names) {
    return {names.begin(), names.end()};
}

void write_record(BinaryWriter& w, const Transition& t) {
    w.u16(kRecordFrameMarker);
    for (double v : t.actor_obs.to_array()) w.f64(v);
    for (double v : t.critic_obs.to_array()) w.f64(v);
    w.f64(t.action);
    w.f64(t.behavior_mean);
    w.f64(t.reward);
    for (double v : t.next_actor_obs.to_array()) w.f64(v);
    for (double v : t.next_critic_obs.to_array()) w.f64(v);
    w.u8(t.done ? 1 : 0);
    w.u64(t.episode_id);
    w.u32(t.step_index);
}

Transition read_record(BinaryReader& r) {
    if (r.u16() != kRecordFrameMarker) throw LoadError("record", "bad frame marker");
    Transition t;
    std::array<double, CriticObservation::kSize> buf{};
    auto read_n = [&](std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) buf[i] = r.f64();
        return std::span<const double>(buf.data(), n);
    };
    t.actor_obs = ActorObservation::from_array(read_n(ActorObservation::kSize));
    t.critic_obs = CriticObservation::from_array(read_n(CriticObservation::kSize));
    t.action = r.f64();
    t.behavior_mean = r.f64();
    t.reward = r.f64();
    t.next_actor_obs = ActorObservation::from_array(read_n(ActorObservation::kSize));
    t.next_critic_obs = CriticObservation::from_array(read_n(CriticObservation::kSize));
    const auto done = r.u8();
    if (done > 1) throw LoadError("record", "done flag must be 0 or 1");
    t.done = done == 1;
    t.episode_id = r.u64();
    t.step_index = r.u32();
    return t;
}

void write_header(BinaryWriter& w, const DatasetHeader& h) {
    w.bytes(kMagic);
    w.u32(h.schema_version);
    w.u32(static_cast<std::uint32_t>(h.actor_fields.size()));
    for (const auto& n : h.actor_fields) w.str(n);
    w.u32(static_cast<std::uint32_t>(h.critic_fields.size()));
    for (const auto& n : h.critic_fields) w.str(n);
    w.str(h.config_digest);
    w.str(h.policy_json);
    w.u64(h.episode_count);
    w.u64(h.transition_count);
    w.u32(static_cast<std::uint32_t>(kRecordSize));
}

DatasetHeader read_header(BinaryReader& r) {
    DatasetHeader h;
    r.field("magic");
    if (r.bytes(kMagic.size()) != kMagic) throw LoadError("magic", "not a dataset file");
    r.field("schema_version");
    h.schema_version = r.u32();
    if (h.schema_version != kDatasetSchemaVersion) {
        throw LoadError("schema_version", "unsupported dataset schema version " + std::to_string(h.schema_version));
    }
    r.field("actor_fields");
    const auto na = r.u32();
    if (na != ActorObservation::kSize) throw LoadError("actor_fields", "unexpected actor feature count");
    for (std::uint32_t i = 0; i < na; ++i) h.actor_fields.push_back(r.str());
    if (h.actor_fields != names_of(ActorObservation::field_names())) {
        throw LoadError("actor_fields", "feature layout does not match this build");
    }
    r.field("critic_fields");
    const auto nc = r.u32();
    if (nc != CriticObservation::kSize) throw LoadError("critic_fields", "unexpected critic feature count");
    for (std::uint32_t i = 0; i < nc; ++i) h.critic_fields.push_back(r.str());
    if (h.critic_fields != names_of(CriticObservation::field_names())) {
        throw LoadError("critic_fields", "feature layout does not match this build");
    }
    r.field("config_digest");
    h.config_digest = r.str();
    r.field("policy");
    h.policy_json = r.str();
    r.field("episode_count");
    h.episode_count = r.u64();
    r.field("transition_count");
    h.transition_count = r.u64();
    r.field("record_size");
    if (r.u32() != kRecordSize) throw LoadError("record_size", "record size does not match this build");
    return h;
}

}  // namespace

std::vector<Transition> rollout_episode(const std::shared_ptr<const CampaignConfig>& config, std::uint64_t env_seed,
                                        std::uint64_t episode_id, const BidFunction& act) {
    EnvState state = reset(config, env_seed);
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(config->horizon));
    ActorObservation obs = observe(state);
    CriticObservation cobs = observe_critic(state);
    while (!state.done) {
        Transition t;
        t.actor_obs = obs;
        t.critic_obs = cobs;
        t.step_index = static_cast<std::uint32_t>(state.step_index);
        t.episode_id = episode_id;
        const auto [bid, reference] = act(obs, state);
        t.action = bid;
        t.behavior_mean = reference;
        const StepOutcome o = step_in_place(state, bid, reference);
        obs = observe(state);
        cobs = observe_critic(state);
        t.reward = o.reward;
        t.next_actor_obs = obs;
        t.next_critic_obs = cobs;
        t.done = o.done;
        out.push_back(t);
    }
    return out;
}

Dataset collect(const std::vector<CampaignConfig>& configs, const BasePolicy& base_policy,
                const BehaviorNoiseSpec& noise, const CollectOptions& options) {
    if (configs.empty()) throw ConfigError("collect: no campaign configs");
    if (options.n_episodes < 1) throw InvalidArgument("collect: n_episodes must be >= 1");
    noise.validate();
    std::vector<std::shared_ptr<const CampaignConfig>> shared;
    for (const auto& c : configs) {
        c.validate();
        shared.push_back(std::make_shared<const CampaignConfig>(c));
    }

    const auto n = static_cast<std::size_t>(options.n_episodes);
    std::vector<std::vector<Transition>> episodes(n);
    parallel_for(n, options.workers, [&](std::size_t e) {
        const std::uint64_t stream = derive_seed(options.seed, e);
        Rng pick(stream);
        const auto& cfg = shared[pick.below(shared.size())];
        Rng noise_rng(derive_seed(stream, 2));
        try {
            episodes[e] = rollout_episode(cfg, derive_seed(stream, 1), e,
                                          [&](const ActorObservation& obs, const EnvState&) {
                                              const double mean = base_policy.forward(obs);
                                              return std::pair{behavior_sample_from_mean(mean, noise, noise_rng), mean};
                                          });
        } catch (const Error& err) {
            throw Error("episode " + std::to_string(e) + " (" + cfg->id + "): " + err.what());
        }
    });

    Dataset ds;
    ds.header.actor_fields = names_of(ActorObservation::field_names());
    ds.header.critic_fields = names_of(CriticObservation::field_names());
    ds.header.config_digest = configs_digest(configs);
    ds.header.policy_json = base_policy.to_json().dump();
    ds.episode_offsets.push_back(0);
    for (auto& ep : episodes) {
        ds.transitions.insert(ds.transitions.end(), ep.begin(), ep.end());
        ds.episode_offsets.push_back(ds.transitions.size());
        std::vector<Transition>().swap(ep);
    }
    ds.header.episode_count = n;
    ds.header.transition_count = ds.transitions.size();
    return ds;
}

std::string serialize_dataset(const Dataset& ds) {
    BinaryWriter w;
    w.buffer().reserve(1024 + ds.transitions.size() * kRecordSize);
    DatasetHeader h = ds.header;
    h.transition_count = ds.transitions.size();
    h.episode_count = ds.episodes();
    write_header(w, h);
    for (const auto& t : ds.transitions) write_record(w, t);
    w.u32(crc32_of(w.buffer()));
    w.bytes(kEndMagic);
    return std::move(w.buffer());
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    write_file_atomic(path, serialize_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    const std::size_t footer = 4 + kEndMagic.size();
    if (data.size() < kMagic.size() + footer) throw LoadError("checksum", "file too short to hold a dataset");
    {
        BinaryReader f(std::string_view(data).substr(data.size() - footer));
        f.field("checksum");
        const auto stored = f.u32();
        if (f.bytes(kEndMagic.size()) != kEndMagic || stored != crc32_of(std::string_view(data).substr(0, data.size() - footer))) {
            throw LoadError("checksum", "checksum mismatch (file truncated or corrupted)");
        }
    }
    BinaryReader r(std::string_view(data).substr(0, data.size() - footer));
    Dataset ds;
    ds.header = read_header(r);
    if (r.remaining() != ds.header.transition_count * kRecordSize) {
        throw LoadError("transition_count", "header count does not match records present");
    }
    ds.transitions.reserve(ds.header.transition_count);
    ds.episode_offsets.push_back(0);
    for (std::uint64_t i = 0; i < ds.header.transition_count; ++i) {
        r.field("record " + std::to_string(i));
        ds.transitions.push_back(read_record(r));
        if (i > 0 && ds.transitions[i].episode_id != ds.transitions[i - 1].episode_id) ds.episode_offsets.push_back(i);
    }
    if (!ds.transitions.empty()) ds.episode_offsets.push_back(ds.transitions.size());
    if (ds.episodes() != ds.header.episode_count) {
        throw LoadError("episode_count", "header episode count does not match records present");
    }
    return ds;
}

namespace {

/// Sequential file reader that keeps a running CRC of everything consumed.
class CrcStream {
public:
    explicit CrcStream(const std::filesystem::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw LoadError("path", "cannot open " + path.string());
        crc_ = crc32(0L, Z_NULL, 0);
    }
    std::string read(std::size_t n, bool track = true) {
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw LoadError("checksum", "unexpected end of file");
        if (track) crc_ = crc32(crc_, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(n));
        return s;
    }
    std::uint32_t crc() const { return static_cast<std::uint32_t>(crc_); }
    bool at_end() {
        return in_.peek() == std::ifstream::traits_type::eof();
    }

private:
    std::ifstream in_;
    uLong crc_;
};

}  // namespace

ValidationReport validate_dataset(const std::filesystem::path& path) {
    ValidationReport rep;
    auto problem = [&rep](std::string s) {
        rep.ok = false;
        if (rep.problems.size() < 50) rep.problems.push_back(std::move(s));
    };
    try {
        CrcStream in(path);
        // Header: parse incrementally, one length-prefixed piece at a time.
        std::string head = in.read(kMagic.size() + 4 + 4);
        auto read_strings = [&](std::uint32_t count) {
            for (std::uint32_t i = 0; i < count; ++i) {
                const std::string len = in.read(4);
                std::uint32_t n;
                std::memcpy(&n, len.data(), 4);
                head += len + in.read(n);
            }
        };
        std::uint32_t na;
        std::memcpy(&na, head.data() + kMagic.size() + 4, 4);
        read_strings(na);
        const std::string nc_bytes = in.read(4);
        head += nc_bytes;
        std::uint32_t nc;
        std::memcpy(&nc, nc_bytes.data(), 4);
        read_strings(nc);
        read_strings(2);
        head += in.read(8 + 8 + 4);
        BinaryReader hr(head);
        const DatasetHeader h = read_header(hr);

        const Transition* prev = nullptr;
        Transition prev_store;
        std::uint64_t count = 0;
        for (; count < h.transition_count; ++count) {
            const std::string rec = in.read(kRecordSize);
            BinaryReader rr(rec);
            rr.field("record " + std::to_string(count));
            Transition t = read_record(rr);
            const std::string where = "record " + std::to_string(count) + ": ";
            if (!(t.reward >= 0.0)) problem(where + "negative reward");
            if (!(t.behavior_mean > 0.0)) problem(where + "behavior_mean must be positive");
            if (!(t.action >= 0.0)) problem(where + "negative action");
            if (prev) {
                if (t.episode_id == prev->episode_id) {
                    if (prev->done) problem(where + "records follow a done=true record in the same episode");
                    if (t.step_index != prev->step_index + 1) problem(where + "steps not consecutive");
                    if (!(t.actor_obs == prev->next_actor_obs)) problem(where + "chain integrity broken");
                } else {
                    if (!prev->done) problem(where + "previous episode does not end with done=true");
                    if (t.episode_id < prev->episode_id) problem(where + "episodes not contiguous/ordered");
                    ++rep.episodes;
                }
            } else {
                ++rep.episodes;
            }
            if (t.step_index == 0 && prev && t.episode_id == prev->episode_id) problem(where + "episode restarts");
            prev_store = t;
            prev = &prev_store;
        }
        if (prev && !prev->done) problem("last episode does not end with done=true");
        rep.transitions = count;
        if (rep.episodes != h.episode_count) problem("header episode count does not match records");
        const std::uint32_t computed = in.crc();
        const std::string footer = in.read(4, false);
        std::uint32_t stored;
        std::memcpy(&stored, footer.data(), 4);
        if (stored != computed) problem("checksum mismatch");
        if (in.read(kEndMagic.size(), false) != kEndMagic) problem("missing end marker");
        if (!in.at_end()) problem("trailing bytes after end marker");
    } catch (const LoadError& e) {
        problem(e.what());
    }
    return rep;
}

void export_text(const Dataset& ds, std::ostream& out) {
    out << "episode_id step_index";
    for (auto n : ActorObservation::field_names()) out << " s." << n;
    for (auto n : CriticObservation::field_names()) out << " c." << n;
    out << " action behavior_mean reward";
    for (auto n : ActorObservation::field_names()) out << " s_next." << n;
    for (auto n : CriticObservation::field_names()) out << " c_next." << n;
    out << " done\n";
    const auto old_precision = out.precision(17);
    for (const auto& t : ds.transitions) {
        out << t.episode_id << ' ' << t.step_index;
        for (double v : t.actor_obs.to_array()) out << ' ' << v;
        for (double v : t.critic_obs.to_array()) out << ' ' << v;
        out << ' ' << t.action << ' ' << t.behavior_mean << ' ' << t.reward;
        for (double v : t.next_actor_obs.to_array()) out << ' ' << v;
        for (double v : t.next_critic_obs.to_array()) out << ' ' << v;
        out << ' ' << (t.done ? 1 : 0) << '\n';
    }
    out.precision(old_precision);
}

ReplaySampler::ReplaySampler(std::size_t dataset_size, std::uint64_t seed) : size_(dataset_size), rng_(seed) {
    if (dataset_size == 0) throw InvalidArgument("ReplaySampler: empty dataset");
}

std::vector<std::size_t> ReplaySampler::sample_indices(int n) {
    if (n <= 0) throw InvalidArgument("sample_batch: n must be positive");
    std::vector<std::size_t> idx(static_cast<std::size_t>(n));
    for (auto& i : idx) i = static_cast<std::size_t>(rng_.below(size_));
    return idx;
}

std::vector<const Transition*> sample_batch(ReplaySampler& sampler, const Dataset& ds, int n) {
    if (sampler.dataset_size() != ds.size()) throw ContractViolation("sample_batch: sampler built for another dataset");
    std::vector<const Transition*> out;
    out.reserve(static_cast<std::size_t>(std::max(n, 0)));
    for (auto i : sampler.sample_indices(n)) out.push_back(&ds.transitions[i]);
    return out;
}

}  // namespace bidrl
