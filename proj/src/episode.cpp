#include "mproto/episode.hpp"

#include <algorithm>
#include <set>

#include "mproto/error.hpp"

namespace mproto {

BinaryMask LabelMap::mask_of(ClassId c) const {
    BinaryMask m(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (at(y, x) == c) {
                m.set(y, x, true);
            }
        }
    }
    return m;
}

std::size_t LabelMap::count(ClassId c) const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), c));
}

void ClassRegistry::validate() const {
    std::set<ClassId> s(seen.begin(), seen.end());
    if (s.size() != seen.size()) {
        throw SpecError("class registry: duplicate seen class");
    }
    std::set<ClassId> u(unseen.begin(), unseen.end());
    if (u.size() != unseen.size()) {
        throw SpecError("class registry: duplicate unseen class");
    }
    for (ClassId c : unseen) {
        if (s.count(c)) {
            throw SpecError("class registry: class " + std::to_string(c) + " is both seen and unseen");
        }
    }
    if (!s.count(background)) {
        throw SpecError("class registry: background " + std::to_string(background) + " must be a seen class");
    }
}

bool ClassRegistry::is_seen(ClassId c) const noexcept {
    return std::find(seen.begin(), seen.end(), c) != seen.end();
}

bool ClassRegistry::is_unseen(ClassId c) const noexcept {
    return std::find(unseen.begin(), unseen.end(), c) != unseen.end();
}

std::vector<ClassId> ClassRegistry::all() const {
    std::vector<ClassId> out = seen;
    out.insert(out.end(), unseen.begin(), unseen.end());
    return out;
}

std::uint64_t split_seed(std::uint64_t episode_seed, std::size_t shot, ClassId class_id) {
    // splitmix64 finalizer over a simple combination.
    std::uint64_t z = episode_seed + 0x9e3779b97f4a7c15ULL * (shot + 1) +
                      0xbf58476d1ce4e5b9ULL * static_cast<std::uint64_t>(static_cast<std::int64_t>(class_id) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

SupportShot make_shot(const Scene& scene, const std::vector<ClassId>& annotate, const std::vector<ClassId>& targets) {
    SupportShot shot;
    shot.features = scene.features;
    for (ClassId c : annotate) {
        if (scene.labels.contains(c)) {
            shot.masks.emplace(c, scene.labels.mask_of(c));
        }
    }
    for (ClassId c : targets) {
        if (!shot.masks.count(c)) {
            if (!scene.labels.contains(c)) {
                throw EpisodeError("make_shot: scene " + scene.id + " does not contain target class " +
                                   std::to_string(c));
            }
            shot.masks.emplace(c, scene.labels.mask_of(c));
        }
    }
    shot.targets = targets;
    return shot;
}

std::vector<std::size_t> scenes_with(const std::vector<Scene>& scenes, ClassId c, std::optional<std::size_t> skip) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        if (skip && *skip == i) {
            continue;
        }
        if (scenes[i].labels.contains(c)) {
            out.push_back(i);
        }
    }
    return out;
}

}  // namespace mproto
