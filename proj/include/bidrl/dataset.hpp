#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bidrl/auction_sim.hpp"
#include "bidrl/base_policy.hpp"
#include "bidrl/mdp.hpp"
#include "bidrl/random.hpp"

namespace bidrl {

/// Binary transition store.
///
/// Layout (little-endian throughout):
///   magic "BIDRLDS1" (8 bytes), u32 schema_version,
///   u32 actor field count, then each field name (u32 length + bytes),
///   u32 critic field count, then each field name,
///   config digest (u32 length + hex text), policy description (u32 length + JSON text),
///   u64 episode count, u64 transition count, u32 record size,
///   records, u32 CRC-32 of everything before it, magic "BIDRLEND".
///
/// Each record is a u16 frame marker 0xB1D5 followed by
///   actor_obs (7 f64), critic_obs (13 f64), action, behavior_mean, reward (f64),
///   next_actor_obs (7 f64), next_critic_obs (13 f64), done (u8), episode_id (u64), step_index (u32).
inline constexpr std::uint32_t kDatasetSchemaVersion = 1;
inline constexpr std::uint16_t kRecordFrameMarker = 0xB1D5;
inline constexpr std::size_t kRecordSize =
    2 + 8 * (2 * (ActorObservation::kSize + CriticObservation::kSize) + 3) + 1 + 8 + 4;

struct DatasetHeader {
    std::uint32_t schema_version = kDatasetSchemaVersion;
    std::vector<std::string> actor_fields;
    std::vector<std::string> critic_fields;
    std::string config_digest;
    std::string policy_json;
    std::uint64_t episode_count = 0;
    std::uint64_t transition_count = 0;
};

struct Dataset {
    DatasetHeader header;
    std::vector<Transition> transitions;
    /// Index of the first record of each episode, plus a final sentinel.
    std::vector<std::size_t> episode_offsets;

    std::size_t size() const { return transitions.size(); }
    std::size_t episodes() const { return episode_offsets.empty() ? 0 : episode_offsets.size() - 1; }
};

struct CollectOptions {
    int n_episodes = 1;
    std::uint64_t seed = 0;
    int workers = 1;
};

/// Rolls out the noised base policy, one random campaign per episode.
Dataset collect(const std::vector<CampaignConfig>& configs, const BasePolicy& base_policy,
                const BehaviorNoiseSpec& noise, const CollectOptions& options);

/// Plays one episode with `act`, which returns {bid, reference bid}. Returns the logged steps.
using BidFunction = std::function<std::pair<double, double>(const ActorObservation&, const EnvState&)>;
std::vector<Transition> rollout_episode(const std::shared_ptr<const CampaignConfig>& config, std::uint64_t env_seed,
                                        std::uint64_t episode_id, const BidFunction& act);

std::string serialize_dataset(const Dataset& ds);
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

struct ValidationReport {
    bool ok = true;
    std::uint64_t episodes = 0;
    std::uint64_t transitions = 0;
    std::vector<std::string> problems;
};

/// Streams the file and reports structural or invariant violations.
ValidationReport validate_dataset(const std::filesystem::path& path);

/// One record per line, space separated, with a header row.
void export_text(const Dataset& ds, std::ostream& out);

/// Uniform sampling with replacement over transitions.
class ReplaySampler {
public:
    ReplaySampler(std::size_t dataset_size, std::uint64_t seed);

    std::vector<std::size_t> sample_indices(int n);
    Rng& rng() { return rng_; }
    const Rng& rng() const { return rng_; }
    std::size_t dataset_size() const { return size_; }

private:
    std::size_t size_;
    Rng rng_;
};

std::vector<const Transition*> sample_batch(ReplaySampler& sampler, const Dataset& ds, int n);

}  // namespace bidrl
