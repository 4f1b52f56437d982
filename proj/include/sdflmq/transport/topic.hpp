#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sdflmq::transport {

// Concrete publish topic: '/'-separated levels, no wildcards, no NUL, non-empty.
class Topic {
public:
    explicit Topic(std::string path);

    const std::string& str() const { return path_; }
    std::vector<std::string_view> levels() const;

    bool operator==(const Topic& other) const { return path_ == other.path_; }

private:
    std::string path_;
};

// Subscription filter with MQTT v3.1.1 wildcard semantics:
// '+' matches exactly one level, '#' matches any suffix and is legal only as the last level.
class TopicFilter {
public:
    explicit TopicFilter(std::string path);

    const std::string& str() const { return path_; }
    std::vector<std::string_view> levels() const;

    bool operator==(const TopicFilter& other) const { return path_ == other.path_; }

private:
    std::string path_;
};

std::vector<std::string_view> split_levels(std::string_view path);

// MQTT v3.1.1 section 4.7 matching, including the rule that filters starting
// with a wildcard do not match topics whose first level starts with '$'.
bool topic_matches(const TopicFilter& filter, const Topic& topic);

} // namespace sdflmq::transport
